fn main() {
    std::process::exit(hrsa::cli::run(std::env::args_os()));
}
