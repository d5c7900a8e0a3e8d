fn main() -> std::process::ExitCode {
    appcessory::cli::main()
}
