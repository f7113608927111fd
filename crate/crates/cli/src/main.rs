fn main() {
    std::process::exit(ser_cli::run(std::env::args_os()));
}
