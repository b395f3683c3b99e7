fn main() {
    std::process::exit(sortrl::cli::main_with_args(std::env::args_os()));
}
