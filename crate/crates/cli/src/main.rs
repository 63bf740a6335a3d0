use clap::Parser;
use ropeattn_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let code = run(&cli, |line| println!("{line}"));
    std::process::exit(code);
}
