fn main() {
    std::process::exit(hgie_core::cli::run(std::env::args_os()));
}
