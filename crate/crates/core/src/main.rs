fn main() {
    std::process::exit(nnfrag_core::harness::cli::run());
}
