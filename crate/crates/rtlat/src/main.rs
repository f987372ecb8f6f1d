fn main() -> std::process::ExitCode {
    rtlat::cli::main()
}
