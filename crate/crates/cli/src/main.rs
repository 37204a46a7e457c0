fn main() {
    std::process::exit(ergokin_cli::run(std::env::args_os()));
}
