fn main() {
    std::process::exit(vtad::cli::run(std::env::args_os()));
}
