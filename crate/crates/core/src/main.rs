fn main() {
    std::process::exit(spcn::cli::run(std::env::args_os()));
}
