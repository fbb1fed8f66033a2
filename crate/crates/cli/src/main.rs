fn main() {
    std::process::exit(tubetopo_cli::run(std::env::args_os()));
}
