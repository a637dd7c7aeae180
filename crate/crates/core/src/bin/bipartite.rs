fn main() {
    std::process::exit(bipartite::cli::run(std::env::args_os()));
}
