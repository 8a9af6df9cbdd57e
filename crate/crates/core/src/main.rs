fn main() {
    std::process::exit(chainscope::cli::run(std::env::args().collect()));
}
