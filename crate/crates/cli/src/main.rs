fn main() {
    std::process::exit(lszone_cli::dispatch(std::env::args_os()));
}
