fn main() {
    std::process::exit(smoothmc::cli::cli_main(std::env::args_os()));
}
