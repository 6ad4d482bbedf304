fn main() {
    std::process::exit(sparse_bnn::cli::run(std::env::args_os()));
}
