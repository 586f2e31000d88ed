fn main() {
    std::process::exit(sasaki_lab::cli::run_command(std::env::args_os()));
}
