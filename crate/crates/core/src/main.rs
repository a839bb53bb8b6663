fn main() {
    std::process::exit(oelift::cli::run(std::env::args_os()));
}
