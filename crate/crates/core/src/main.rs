fn main() -> std::process::ExitCode {
    mfdr::cli::main_entry()
}
