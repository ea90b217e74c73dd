fn main() {
    std::process::exit(torus_fabric::cli::main_with(std::env::args_os()));
}
