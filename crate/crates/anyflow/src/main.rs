fn main() {
    std::process::exit(anyflow::cli::run());
}
