use clap::Parser;

fn main() {
    let cli = quadspin::cli::Cli::parse();
    match quadspin::cli::run(cli) {
        Ok(summary) => print!("{summary}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
