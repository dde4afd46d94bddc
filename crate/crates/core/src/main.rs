fn main() {
    std::process::exit(softalign::cli::main_with(std::env::args_os()));
}
