fn main() {
    std::process::exit(deep_ela::cli::run(std::env::args_os()));
}
