fn main() {
    let code = latin_polarity::cli::run(std::env::args_os());
    std::process::exit(code);
}
