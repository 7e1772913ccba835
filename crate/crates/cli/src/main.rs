fn main() {
    std::process::exit(goas_cli::run(std::env::args_os()));
}
