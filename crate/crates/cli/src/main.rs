fn main() {
    std::process::exit(conv4rec_cli::run(std::env::args_os()));
}
