fn main() {
    std::process::exit(trapforge::cli::run(std::env::args_os()));
}
