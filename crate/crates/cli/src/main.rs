fn main() {
    std::process::exit(rmlab_cli::run_cli(std::env::args_os()));
}
