fn main() {
    std::process::exit(npmle::cli::run(std::env::args_os()));
}
