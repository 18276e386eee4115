fn main() {
    std::process::exit(bqsolve::cli::main_with(std::env::args_os()));
}
