fn main() {
    std::process::exit(gca_matting::cli::run(std::env::args_os()));
}
