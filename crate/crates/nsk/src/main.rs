fn main() {
    std::process::exit(nsk::cli::main_with(std::env::args_os()));
}
