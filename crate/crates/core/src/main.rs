fn main() {
    std::process::exit(qntk::cli::run(std::env::args_os()));
}
