fn main() {
    std::process::exit(addlab_cli::run_cli(std::env::args_os()));
}
