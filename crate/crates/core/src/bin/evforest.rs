fn main() {
    std::process::exit(evforest::harness::cli::run(std::env::args_os()));
}
