use clap::Parser;

fn main() -> anyhow::Result<()> {
    maskopt_cli::execute(maskopt_cli::Cli::parse())
}
