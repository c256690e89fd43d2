fn main() {
    std::process::exit(apex_dqfd::harness::cli::run(std::env::args_os()));
}
