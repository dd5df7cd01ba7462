fn main() -> std::process::ExitCode {
    stainco::cli::main()
}
