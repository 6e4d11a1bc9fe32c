fn main() {
    std::process::exit(onesided_mc::cli::run(std::env::args_os()));
}
