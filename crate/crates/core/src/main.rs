fn main() {
    std::process::exit(setrank::cli::dispatch(std::env::args_os()));
}
