fn main() {
    std::process::exit(qpu_gatekeeper::cli::main());
}
