use clap::Parser;

fn main() {
    env_logger::Builder::new().filter_level(log::LevelFilter::Warn).init();
    let cli = vanetsim::Cli::parse();
    std::process::exit(vanetsim::run(&cli));
}
