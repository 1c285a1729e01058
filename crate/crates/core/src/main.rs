fn main() {
    std::process::exit(morphfield::cli::dispatch(std::env::args_os()));
}
