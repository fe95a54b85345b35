fn main() -> std::process::ExitCode {
    respec::cli::main()
}
