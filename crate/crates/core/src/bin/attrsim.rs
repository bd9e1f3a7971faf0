use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use attrsim::attribution::Method;
use attrsim::experiment::{
    attribute_stage, generate_stage, render_from_files, run_experiment, simulate_stage, train_stage, ExperimentConfig,
    ExperimentError, Paths,
};
use attrsim::simulation::SimulationReport;

#[derive(Parser)]
#[command(name = "attrsim", version, about = "Attribution simulation experiments on a micro-transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write training and evaluation data.
    Generate { config: PathBuf },
    /// Train one model per variant.
    Train { config: PathBuf },
    /// Build neighborhoods and attribute their base examples.
    Attribute { config: PathBuf },
    /// Score every method and write report.json.
    Simulate { config: PathBuf },
    /// All of the above.
    Run { config: PathBuf },
    /// Draw one attribution map as SVG.
    Render {
        attributions: PathBuf,
        instance_id: String,
        #[arg(long)]
        method: Option<String>,
        /// Defaults to `<instance_id>-<method>.svg` next to the attributions file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_report(report: &SimulationReport) {
    println!(
        "setting {}  neighborhoods {}  positive rate {:.3}",
        report.setting.name(),
        report.neighborhoods,
        report.positive_rate
    );
    println!("{:<10} {:>7} {:>7}", "method", "S-ACC", "S-AUC");
    for row in &report.rows {
        let auc = row.s_auc.map_or("n/a".to_owned(), |a| format!("{:.1}", 100.0 * a));
        println!("{:<10} {:>7.1} {:>7}", row.method, 100.0 * row.s_acc, auc);
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let load = |p: &PathBuf| ExperimentConfig::load(p);
    match cli.command {
        Command::Generate { config } => generate_stage(&load(&config)?),
        Command::Train { config } => train_stage(&load(&config)?),
        Command::Attribute { config } => attribute_stage(&load(&config)?),
        Command::Simulate { config } => {
            let report = simulate_stage(&load(&config)?)?;
            print_report(&report);
            Ok(())
        }
        Command::Run { config } => {
            let cfg = load(&config)?;
            let report = run_experiment(&cfg)?;
            print_report(&report);
            println!("wrote {}", Paths::new(&cfg.output_dir).report().display());
            Ok(())
        }
        Command::Render {
            attributions,
            instance_id,
            method,
            out,
        } => {
            let method = method
                .map(|m| {
                    m.parse::<Method>().map_err(|e| ExperimentError::Config {
                        line: None,
                        field: "--method".into(),
                        message: e.to_string(),
                    })
                })
                .transpose()?;
            let svg = render_from_files(&attributions, &instance_id, method)?;
            let out = out.unwrap_or_else(|| {
                let tag = method.map_or("map".to_owned(), |m| m.name().to_owned());
                attributions.with_file_name(format!("{instance_id}-{tag}.svg"))
            });
            std::fs::write(&out, svg).map_err(|e| ExperimentError::Io {
                path: out.display().to_string(),
                message: e.to_string(),
            })?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
