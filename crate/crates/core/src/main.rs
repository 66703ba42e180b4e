fn main() -> std::process::ExitCode {
    fluid_woz::cli::run(std::env::args_os())
}
