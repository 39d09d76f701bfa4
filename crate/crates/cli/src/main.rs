fn main() {
    std::process::exit(kirchhoff_spectral_cli::run(std::env::args_os()));
}
