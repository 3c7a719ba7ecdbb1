fn main() {
    std::process::exit(raterlab::cli::run(std::env::args_os()));
}
