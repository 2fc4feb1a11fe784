fn main() {
    std::process::exit(lcw::cli::main_with_args(std::env::args_os()));
}
