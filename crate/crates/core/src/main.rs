fn main() {
    std::process::exit(spinham::cli::run(std::env::args_os()));
}
