fn main() {
    std::process::exit(cebmf_cli::run(std::env::args_os()));
}
