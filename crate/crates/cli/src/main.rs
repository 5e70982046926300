fn main() {
    std::process::exit(panel_scb_cli::run(std::env::args_os()));
}
