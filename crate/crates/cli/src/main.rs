fn main() {
    std::process::exit(afd_cli::run_command(std::env::args_os()));
}
