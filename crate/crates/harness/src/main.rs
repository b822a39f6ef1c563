fn main() {
    let code = volrank_harness::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
