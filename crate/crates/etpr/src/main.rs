fn main() {
    std::process::exit(etpr::cli::run(std::env::args_os()));
}
