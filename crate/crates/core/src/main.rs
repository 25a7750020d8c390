fn main() {
    std::process::exit(drsc::cli::run(std::env::args_os()));
}
