fn main() {
    std::process::exit(siso_stsd::cli::main_with_args(std::env::args_os()));
}
