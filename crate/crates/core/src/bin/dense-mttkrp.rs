fn main() {
    std::process::exit(dense_mttkrp::cli::main_with_args(std::env::args_os()));
}
