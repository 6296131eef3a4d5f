fn main() {
    std::process::exit(ccopf::cli::run(std::env::args_os()));
}
