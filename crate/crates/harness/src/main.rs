fn main() {
    std::process::exit(nfchain_harness::cli::main(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr()));
}
