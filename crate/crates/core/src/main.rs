fn main() -> std::process::ExitCode {
    ret_core::cli::main_entry()
}
