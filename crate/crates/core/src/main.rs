fn main() {
    let code = pyramid_sim::cli::main_with_args(std::env::args_os());
    std::process::exit(code);
}
