fn main() {
    std::process::exit(varspike::cli::run(std::env::args_os()));
}
