fn main() {
    std::process::exit(glmv::cli::dispatch(std::env::args_os()));
}
