fn main() {
    std::process::exit(dynbits::cli::main_with_args(std::env::args_os()));
}
