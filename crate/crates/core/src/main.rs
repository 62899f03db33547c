fn main() {
    std::process::exit(sldf_core::cli::run_from(std::env::args_os()));
}
