fn main() {
    std::process::exit(kgfuse::cli::run(std::env::args_os()));
}
