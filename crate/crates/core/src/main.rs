fn main() -> std::process::ExitCode {
    rampmeter::cli::main()
}
