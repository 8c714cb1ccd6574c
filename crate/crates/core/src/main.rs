fn main() {
    std::process::exit(heatsink_pinn::cli::main_with_args(std::env::args_os()));
}
