fn main() {
    std::process::exit(metagen::cli::run(std::env::args_os()));
}
