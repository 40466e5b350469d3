fn main() {
    std::process::exit(mdife::harness::cli::run_cli(std::env::args()));
}
