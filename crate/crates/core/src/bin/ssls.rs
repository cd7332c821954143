fn main() {
    std::process::exit(ssls::cli::main_with_args(std::env::args_os()));
}
