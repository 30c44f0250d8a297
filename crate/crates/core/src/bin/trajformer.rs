fn main() {
    std::process::exit(trajformer::cli_main());
}
