fn main() {
    std::process::exit(acmf::cli::run());
}
