fn main() {
    std::process::exit(groundplan::cli::run(std::env::args_os()));
}
