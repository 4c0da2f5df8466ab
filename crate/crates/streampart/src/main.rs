fn main() {
    std::process::exit(streampart::cli::run(std::env::args_os()));
}
