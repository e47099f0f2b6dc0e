fn main() {
    std::process::exit(cogniscope::harness::cli::main_with_args(std::env::args_os()));
}
