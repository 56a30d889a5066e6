fn main() {
    std::process::exit(freqsim::cli::run());
}
