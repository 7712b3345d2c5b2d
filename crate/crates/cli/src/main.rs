fn main() {
    std::process::exit(lmstar_cli::main_with_args(std::env::args_os()));
}
