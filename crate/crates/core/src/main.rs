fn main() {
    std::process::exit(rsinstruct::cli::run(std::env::args_os()));
}
