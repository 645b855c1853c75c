fn main() {
    std::process::exit(kgtype::cli::run(std::env::args_os()));
}
