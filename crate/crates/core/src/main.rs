fn main() {
    std::process::exit(usd_consensus::cli::dispatch(std::env::args_os()));
}
