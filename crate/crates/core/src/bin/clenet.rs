fn main() {
    std::process::exit(clenet::cli::run(std::env::args_os()));
}
