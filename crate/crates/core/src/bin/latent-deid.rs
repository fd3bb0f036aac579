fn main() -> std::process::ExitCode {
    latent_deid::cli::main()
}
