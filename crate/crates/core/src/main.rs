fn main() {
    std::process::exit(sip_colav::cli::run(std::env::args_os()));
}
