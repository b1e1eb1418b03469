fn main() {
    std::process::exit(idla_cli::cli::entry(std::env::args_os()));
}
