fn main() {
    std::process::exit(demoforge_cli::run_cli(std::env::args_os()));
}
