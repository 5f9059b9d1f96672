use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use phlab::bundles::Bundle;
use phlab::experiment::{render_report, run_experiment, ExperimentConfig, ReportFormat};
use phlab::foliation::{trace_leaf, TraceOptions};
use phlab::orbits::all_orbits;
use phlab::torus::{classify_automorphism, linear_periodic_count, IntMatrix, ToralAutomorphism, Vec3};

#[derive(Parser)]
#[command(version, about = "Rigidity battery for perturbations of 3-torus automorphisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file; stdout when absent
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,

    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Leaf {
    S,
    C,
    U,
}

#[derive(Subcommand)]
enum Command {
    /// Run the battery over the configured sweep and write the report
    Run,
    /// Classify an integer matrix
    Classify {
        /// Nine comma-separated entries, row major; defaults to the config matrix
        #[arg(long, value_delimiter = ',')]
        matrix: Option<Vec<i64>>,
    },
    /// Center exponents of the periodic orbits of one period
    Orbit {
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 1)]
        period: usize,
        /// Restrict to one orbit label i,j,k
        #[arg(long, value_delimiter = ',')]
        label: Option<Vec<i64>>,
    },
    /// Export a traced leaf as t,x,y,z rows
    Leaf {
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, value_enum)]
        bundle: Leaf,
        #[arg(long, value_delimiter = ',', default_value = "0,0,0")]
        point: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        length: f64,
        #[arg(long, default_value_t = phlab::foliation::DEFAULT_STEP)]
        step: f64,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("--config is required for this command")?;
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn sink(path: Option<&PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn pick_epsilon(cfg: &ExperimentConfig, epsilon: Option<f64>) -> f64 {
    epsilon.unwrap_or(cfg.epsilon_sweep[0])
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Run => {
            let cfg = load_config(&cli)?;
            let report = run_experiment(&cfg)?;
            let format = match cli.format {
                Format::Json => ReportFormat::Json,
                Format::Csv => ReportFormat::Csv,
            };
            let out = cli.out.clone().or(cfg.output.clone());
            sink(out.as_ref())?.write_all(&render_report(&report, format)?)?;
        }
        Command::Classify { matrix } => {
            let rows = match matrix {
                Some(v) if v.len() != 9 => bail!("--matrix takes nine entries, got {}", v.len()),
                Some(v) => [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]],
                None => load_config(&cli)?.matrix,
            };
            let class = classify_automorphism(&IntMatrix(rows));
            let mut doc = json!({ "matrix": rows, "classification": class });
            if let Ok(a) = ToralAutomorphism::from_rows(rows) {
                doc["eigenvalues"] = json!(a.eigenvalues());
                doc["periodic_points"] = json!([1, 2, 3].map(|n| linear_periodic_count(&a, n).ok()));
            }
            writeln!(sink(cli.out.as_ref())?, "{}", serde_json::to_string_pretty(&doc)?)?;
        }
        Command::Orbit { epsilon, period, label } => {
            if label.as_ref().is_some_and(|l| l.len() != 3) {
                bail!("--label takes three integers");
            }
            let cfg = load_config(&cli)?;
            let m = cfg.model(pick_epsilon(&cfg, *epsilon))?;
            let (orbits, skipped) = all_orbits(&m, *period, cfg.settings.orbit_limit)?;
            let rows: Vec<_> = orbits
                .iter()
                .filter(|o| o.period == *period && label.as_ref().is_none_or(|l| l[..] == o.label[..]))
                .map(|o| {
                    json!({
                        "period": o.period,
                        "label": o.label,
                        "denominator": o.denominator,
                        "lambda_c": o.lambda_c,
                        "lambda_c_monodromy": o.lambda_c_monodromy,
                        "residual": o.residual,
                        "points": o.points,
                    })
                })
                .collect();
            if rows.is_empty() && label.is_some() {
                bail!("no period-{period} orbit with label {label:?}");
            }
            let doc = json!({ "epsilon": m.epsilon(), "orbits": rows, "skipped": skipped });
            writeln!(sink(cli.out.as_ref())?, "{}", serde_json::to_string_pretty(&doc)?)?;
        }
        Command::Leaf { epsilon, bundle, point, length, step } => {
            if point.len() != 3 {
                bail!("--point takes three coordinates, got {}", point.len());
            }
            let cfg = load_config(&cli)?;
            let m = cfg.model(pick_epsilon(&cfg, *epsilon))?;
            let b = match bundle {
                Leaf::S => Bundle::S,
                Leaf::C => Bundle::C,
                Leaf::U => Bundle::U,
            };
            let seg = trace_leaf(&m, &Vec3::new(point[0], point[1], point[2]), b, *length, &TraceOptions::with_step(*step))?;
            seg.write_csv(sink(cli.out.as_ref())?)?;
        }
    }
    Ok(())
}
