fn main() {
    std::process::exit(combustion_lab::cli::main_with_args(
        std::env::args_os().collect(),
    ));
}
