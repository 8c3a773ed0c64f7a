fn main() {
    std::process::exit(attn_guide::cli::run(std::env::args_os()));
}
