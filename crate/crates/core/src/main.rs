fn main() {
    driftsafe::cli::init_logging();
    std::process::exit(driftsafe::cli::run(std::env::args_os()));
}
