fn main() {
    std::process::exit(vlseg3d::cli::run(std::env::args().collect()));
}
