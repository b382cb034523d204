fn main() {
    std::process::exit(identreg::cli::main_with_args(std::env::args_os()));
}
