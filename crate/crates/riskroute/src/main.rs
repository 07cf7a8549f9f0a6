fn main() {
    std::process::exit(riskroute::cli::run());
}
