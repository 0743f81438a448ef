fn main() {
    std::process::exit(aerotext::cli::run(std::env::args_os()));
}
