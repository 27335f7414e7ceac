fn main() {
    let stdout = std::io::stdout();
    let code = anticipate::cli::run(std::env::args_os(), &mut stdout.lock(), &mut std::io::stderr());
    std::process::exit(code);
}
