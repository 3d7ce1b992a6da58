fn main() {
    std::process::exit(valleysim::cli::main_with_args(std::env::args_os()));
}
