fn main() -> std::process::ExitCode {
    unglare::cli::main()
}
