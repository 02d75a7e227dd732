fn main() {
    std::process::exit(equalizer::cli::run(std::env::args_os()));
}
