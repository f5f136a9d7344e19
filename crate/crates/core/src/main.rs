fn main() {
    std::process::exit(subcrit::cli::run(std::env::args_os()));
}
