fn main() {
    std::process::exit(homesh::cli::run(std::env::args_os()));
}
