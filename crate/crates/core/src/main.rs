fn main() {
    std::process::exit(thermalign::cli::dispatch(std::env::args_os()));
}
