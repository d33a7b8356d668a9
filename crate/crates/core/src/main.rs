fn main() {
    if let Err(e) = beliefst::cli::run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
