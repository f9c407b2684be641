fn main() {
    std::process::exit(requant::cli::main());
}
