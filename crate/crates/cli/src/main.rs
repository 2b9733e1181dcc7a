use clap::Parser;

fn main() {
    let args = voltube_cli::Args::parse();
    match voltube_cli::run(&args) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
        }
        Err(e) => {
            eprintln!("voltube: {e}");
            if let voltube_cli::CliError::Hypothesis(report) = &e {
                for v in report.r_violations.iter().take(10) {
                    eprintln!("  {v:?}");
                }
                for v in report.g_violations.iter().take(10) {
                    eprintln!("  {v:?}");
                }
            }
            std::process::exit(e.exit_code());
        }
    }
}
