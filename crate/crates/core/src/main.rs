use clap::Parser;

fn main() {
    let cli = fogcnn::cli::Cli::parse();
    std::process::exit(fogcnn::cli::run(cli));
}
