fn main() {
    std::process::exit(kforge_cli::run(std::env::args_os()));
}
