fn main() {
    std::process::exit(constrained_hj_cli::run(std::env::args_os()));
}
