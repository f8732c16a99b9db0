fn main() {
    std::process::exit(canvolve::cli::run(std::env::args_os()));
}
