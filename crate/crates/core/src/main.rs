fn main() {
    std::process::exit(netscope::cli::main_with_args(std::env::args_os()));
}
