fn main() {
    std::process::exit(emcom::cli::run(std::env::args().skip(1).collect()));
}
