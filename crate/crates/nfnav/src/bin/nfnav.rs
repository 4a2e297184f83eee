fn main() {
    std::process::exit(nfnav::cli::run());
}
