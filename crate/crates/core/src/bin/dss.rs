fn main() {
    std::process::exit(dss_core::cli::run(std::env::args_os()));
}
