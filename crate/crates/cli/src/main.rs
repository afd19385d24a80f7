fn main() {
    std::process::exit(bner_cli::run(std::env::args_os()));
}
