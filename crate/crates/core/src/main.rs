fn main() {
    std::process::exit(sensurv::cli::main_with(std::env::args_os()));
}
