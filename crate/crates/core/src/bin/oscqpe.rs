fn main() {
    std::process::exit(oscqpe::cli::main_with_args(std::env::args_os()));
}
