fn main() {
    std::process::exit(sur::cli::main_with_args(std::env::args_os()));
}
