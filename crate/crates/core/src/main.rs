fn main() {
    std::process::exit(lase::cli::run(std::env::args_os()));
}
