fn main() {
    std::process::exit(psqrnn::cli::run(std::env::args_os()));
}
