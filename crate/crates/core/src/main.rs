fn main() {
    std::process::exit(sonotag::cli::run(std::env::args_os()));
}
