fn main() {
    std::process::exit(fricest_cli::run(std::env::args_os()));
}
