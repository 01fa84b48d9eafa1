fn main() -> std::process::ExitCode {
    pairbench_harness::cli::main()
}
