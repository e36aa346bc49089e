fn main() {
    std::process::exit(c2flo_cli::main_with_args(std::env::args_os()));
}
