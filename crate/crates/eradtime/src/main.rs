fn main() {
    if let Err(e) = eradtime::cli::run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
