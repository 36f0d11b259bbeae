fn main() {
    std::process::exit(dslab::cli::dispatch(std::env::args_os()));
}
