fn main() {
    std::process::exit(cyclone_core::cli::run(std::env::args_os()));
}
