fn main() -> std::process::ExitCode {
    pairlearn::cli::main_entry()
}
