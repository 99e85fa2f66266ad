fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_target(false)
        .format_timestamp(None)
        .init();
    std::process::exit(annocar::cli::main_with_args(std::env::args_os()));
}
