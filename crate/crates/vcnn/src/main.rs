fn main() {
    std::process::exit(vcnn::cli::main_with_args(std::env::args()));
}
