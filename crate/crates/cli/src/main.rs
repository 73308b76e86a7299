fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = damageid::run_cli(std::env::args());
    std::process::exit(code);
}
