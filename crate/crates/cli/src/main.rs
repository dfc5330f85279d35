fn main() {
    std::process::exit(vidqg_cli::run(std::env::args_os()));
}
