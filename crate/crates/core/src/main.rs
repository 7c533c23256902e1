use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XINV_LOG", "error")).init();
    let cli = xinv::cli::Cli::parse();
    if let Err(e) = xinv::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
