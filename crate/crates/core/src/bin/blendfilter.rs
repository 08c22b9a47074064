fn main() {
    std::process::exit(blendfilter::cli::cli_main(std::env::args_os()));
}
