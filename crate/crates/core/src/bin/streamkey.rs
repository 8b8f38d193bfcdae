fn main() {
    std::process::exit(streamkey::cli::main_with_args(std::env::args_os()));
}
