fn main() {
    std::process::exit(dhaug::cli::run_cli(std::env::args_os()));
}
