fn main() {
    std::process::exit(integrability::cli::main_with_args(std::env::args_os()));
}
