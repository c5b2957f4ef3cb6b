use std::process::ExitCode;

use clap::Parser;
use wishvol_core::cli::{error_record, run_command, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = cli.resolve_config();
    let out_dir = cfg.as_ref().map(|c| c.out.clone()).ok().or_else(|| cli.out.clone());
    let result = cfg.and_then(|cfg| run_command(cli.command, &cfg).map(|b| (cfg, b)));
    match result {
        Ok((cfg, bundle)) => {
            println!("{}", cfg.out.join(bundle.results_file_name()).display());
            for w in &bundle.metadata.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = error_record(Some(cli.command), &e);
            eprintln!("{record}");
            if let Some(out) = out_dir {
                let _ = std::fs::create_dir_all(&out).and_then(|_| std::fs::write(out.join("error.json"), record.to_string()));
            }
            ExitCode::from(1)
        }
    }
}
