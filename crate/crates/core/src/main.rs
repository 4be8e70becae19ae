fn main() {
    std::process::exit(ia_rcrm::harness::cli::cli_main(std::env::args_os()));
}
