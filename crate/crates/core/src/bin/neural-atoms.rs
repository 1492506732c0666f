fn main() {
    std::process::exit(neural_atoms::cli::run(std::env::args_os()));
}
