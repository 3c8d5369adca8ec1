fn main() {
    std::process::exit(splitlm_cli::run(std::env::args_os()));
}
