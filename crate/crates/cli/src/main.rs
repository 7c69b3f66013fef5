fn main() {
    std::process::exit(invdim_cli::app::run(std::env::args_os()));
}
