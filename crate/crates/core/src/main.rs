fn main() {
    std::process::exit(funit::cli::run(std::env::args_os()));
}
