fn main() {
    let stdout = std::io::stdout();
    let code = geomk::cli::dispatch(std::env::args_os(), &mut stdout.lock());
    std::process::exit(code);
}
