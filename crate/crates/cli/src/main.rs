fn main() {
    std::process::exit(cdsa_cli::run(std::env::args_os()));
}
