fn main() {
    std::process::exit(gdmap_cli::parse_and_dispatch(std::env::args_os()))
}
