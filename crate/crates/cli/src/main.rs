fn main() {
    std::process::exit(tsfb_cli::run_cli(std::env::args_os()));
}
