fn main() {
    std::process::exit(ringfl_core::cli::main_with_args(std::env::args_os()));
}
