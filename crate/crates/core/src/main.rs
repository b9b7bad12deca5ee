fn main() {
    std::process::exit(implicit_spde::cli::main_with_args(std::env::args_os()));
}
