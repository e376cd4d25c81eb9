fn main() {
    std::process::exit(barrier_steer::cli::run(std::env::args_os()));
}
