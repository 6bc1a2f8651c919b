fn main() {
    std::process::exit(slff_cli::run_cli(std::env::args_os()));
}
