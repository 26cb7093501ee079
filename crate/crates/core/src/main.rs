fn main() {
    let code = deid::cli::run_command(std::env::args_os());
    std::process::exit(code);
}
