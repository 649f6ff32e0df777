fn main() {
    let code = sscm_cli::dispatch(std::env::args(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
