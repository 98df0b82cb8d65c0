fn main() {
    std::process::exit(mdcorner::cli::run(std::env::args_os()));
}
