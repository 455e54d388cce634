fn main() {
    std::process::exit(fishersim::cli::run(std::env::args_os()));
}
