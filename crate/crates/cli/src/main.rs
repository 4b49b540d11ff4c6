fn main() {
    std::process::exit(handtrack_cli::main_with_args(std::env::args_os()));
}
