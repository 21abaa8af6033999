fn main() {
    std::process::exit(cusplab::cli::main_with(std::env::args_os()));
}
