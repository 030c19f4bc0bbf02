fn main() {
    std::process::exit(damc::cli::run());
}
