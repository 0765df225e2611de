fn main() -> std::process::ExitCode {
    corridor_twin::cli::main()
}
