fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = rtsod::cli::run() {
        eprintln!("error[{}]: {e}", e.reason_code());
        std::process::exit(e.exit_code());
    }
}
