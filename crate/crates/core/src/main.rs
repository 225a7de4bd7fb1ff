fn main() {
    std::process::exit(dualplan::harness::cli::run(std::env::args_os()));
}
