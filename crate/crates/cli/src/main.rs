fn main() {
    std::process::exit(watchforge_cli::run(std::env::args_os()));
}
