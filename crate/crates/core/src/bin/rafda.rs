fn main() {
    std::process::exit(rafda::cli::run_from(std::env::args_os()));
}
