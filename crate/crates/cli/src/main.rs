fn main() {
    std::process::exit(irand_cli::cli::main_with(std::env::args_os()));
}
