fn main() {
    std::process::exit(faultbin::run(std::env::args_os()));
}
