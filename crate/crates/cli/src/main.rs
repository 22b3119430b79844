fn main() {
    std::process::exit(qwitness_cli::run(std::env::args_os()));
}
