fn main() {
    std::process::exit(unlbench_cli::run(std::env::args_os()));
}
