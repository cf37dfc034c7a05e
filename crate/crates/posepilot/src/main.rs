fn main() -> std::process::ExitCode {
    posepilot::cli::main()
}
