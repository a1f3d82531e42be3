fn main() {
    std::process::exit(tapcrnn::cli::run(std::env::args_os()));
}
