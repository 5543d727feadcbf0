fn main() {
    std::process::exit(featbench::cli_config::main_with_args(std::env::args_os()));
}
