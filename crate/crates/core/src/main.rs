fn main() {
    std::process::exit(distparse::cli::run(std::env::args_os()));
}
