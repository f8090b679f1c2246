fn main() {
    std::process::exit(facrig::cli::run(std::env::args_os()));
}
