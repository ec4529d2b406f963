use clap::Parser;

fn main() {
    let cli = svcplace_cli::Cli::parse();
    match svcplace_cli::run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
        }
        Err(e) => {
            eprintln!("svcplace: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
