fn main() {
    std::process::exit(flowplan_cli::run(std::env::args_os()));
}
