fn main() {
    let code = l1net::cli::main_with(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
