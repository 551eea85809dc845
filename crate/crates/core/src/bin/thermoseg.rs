fn main() {
    std::process::exit(thermoseg::cli::main_with_args(std::env::args_os()));
}
