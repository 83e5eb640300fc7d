fn main() -> std::process::ExitCode {
    pnlk_bench::cli::run()
}
