fn main() -> std::process::ExitCode {
    certibias::cli::main()
}
