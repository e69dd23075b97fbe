fn main() {
    std::process::exit(tmtopo::cli::cli_dispatch(std::env::args_os()));
}
