fn main() {
    std::process::exit(wfmpc::cli::main());
}
