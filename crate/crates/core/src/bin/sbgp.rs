fn main() {
    std::process::exit(sbgp::cli::run(std::env::args_os()));
}
