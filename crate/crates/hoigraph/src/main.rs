fn main() {
    std::process::exit(hoigraph::pipeline::cli::run(std::env::args_os()));
}
