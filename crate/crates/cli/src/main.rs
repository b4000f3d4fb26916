fn main() {
    std::process::exit(carcensus_cli::run(std::env::args_os()));
}
