fn main() {
    std::process::exit(fatigue_core::cli::run(std::env::args_os()));
}
