fn main() {
    std::process::exit(nnpde::cli::run());
}
