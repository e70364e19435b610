fn main() {
    std::process::exit(scurve_cli::main_with_args(std::env::args_os()));
}
