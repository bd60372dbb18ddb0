fn main() {
    std::process::exit(llc_lab::cli::run(std::env::args_os()));
}
