fn main() {
    std::process::exit(ste_cli::run(std::env::args_os()));
}
