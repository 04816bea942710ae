fn main() -> std::process::ExitCode {
    medspan::cli::main()
}
