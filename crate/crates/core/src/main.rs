fn main() {
    std::process::exit(bayescg::cli::main_with_args(std::env::args_os()));
}
