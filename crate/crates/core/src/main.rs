fn main() {
    std::process::exit(irtbench::cli::main_with_args(std::env::args_os()));
}
