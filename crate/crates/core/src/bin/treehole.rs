fn main() {
    std::process::exit(treehole::cli::main());
}
