use clap::Parser;
use kpz_lab::{configure_threads, output, ExperimentConfig, LabError, RawConfig, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Run one kpz-lab experiment and write its CSV and JSON summary.
#[derive(Debug, Parser)]
#[command(name = "kpz-lab", version, about)]
struct Cli {
    #[arg(value_enum)]
    subcommand: Subcommand,
    /// TOML file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    x_max: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated ε values.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long = "sep")]
    a: Option<f64>,
    #[arg(long = "window")]
    l: Option<f64>,
    #[arg(long)]
    quad_order: Option<usize>,
    /// `t,flag` CSV for the dimension subcommand.
    #[arg(long)]
    flag_file: Option<PathBuf>,
}

impl Cli {
    fn flags(&self) -> RawConfig {
        RawConfig {
            subcommand: Some(self.subcommand),
            n: self.n,
            replicas: self.replicas,
            master_seed: self.seed,
            output_dir: self.out.clone(),
            grid_step: self.grid_step,
            x_max: self.x_max,
            beta: self.beta,
            eps_list: self.eps.clone(),
            a: self.a,
            l: self.l,
            quad_order: self.quad_order,
            flag_file: self.flag_file.clone(),
            ..RawConfig::default()
        }
    }
}

fn run(cli: &Cli) -> kpz_lab::Result<output::Summary> {
    configure_threads()?;
    let file = cli.config.as_deref().map(RawConfig::from_path).transpose()?;
    let flags = cli.flags();
    let merged = file.clone().unwrap_or_default().overlay(&flags);
    let cfg = ExperimentConfig::resolve(&merged)?;
    output::execute(&cfg, file, flags)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(s) => {
            for g in &s.gates {
                println!("{:<28} {} measured {} target {}", g.id, if g.passed { "pass" } else { "FAIL" }, g.measured, g.target);
            }
            println!("wrote {} ({:.1} s)", s.csv, s.wall_clock_s);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("kpz-lab: {e}");
            ExitCode::from(if matches!(e, LabError::Config(_)) { 2 } else { 1 })
        }
    }
}
