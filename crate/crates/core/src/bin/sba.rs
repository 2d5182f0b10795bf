fn main() {
    std::process::exit(sba_solver::cli::run());
}
