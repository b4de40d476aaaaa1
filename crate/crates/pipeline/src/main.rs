fn main() -> std::process::ExitCode {
    bikedepth::cli::main()
}
