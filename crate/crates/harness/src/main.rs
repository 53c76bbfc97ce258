fn main() -> std::process::ExitCode {
    dynaug::cli::main()
}
