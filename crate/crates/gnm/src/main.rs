fn main() -> std::process::ExitCode {
    gnm::cli::main_with_args(std::env::args_os())
}
