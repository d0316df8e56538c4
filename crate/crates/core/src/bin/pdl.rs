fn main() {
    std::process::exit(pdl::cli::run(std::env::args_os()));
}
