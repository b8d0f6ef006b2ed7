fn main() {
    std::process::exit(collapse_cert::report::run_cli(std::env::args_os()));
}
