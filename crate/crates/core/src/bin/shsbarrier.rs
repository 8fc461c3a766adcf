use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shsbarrier::probability::{reach_bound, BoundInput};
use shsbarrier::project::{report_json, CertificateSource, Pipeline, Project, Stage, SuppliedCheck};
use shsbarrier::sim::write_traces_csv;
use shsbarrier::{Error, Result};

#[derive(Parser)]
#[command(name = "shsbarrier", version, about = "Barrier certificates for networks of stochastic hybrid systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    project: PathBuf,
    /// Last stage to run.
    #[arg(long)]
    stage: Option<String>,
    /// Overrides the synthesis and simulation seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Strict margin mode: inconclusive checks count as failures.
    #[arg(long)]
    strict: bool,
    /// Directory for report.json, certificates.json and trace CSVs;
    /// the report goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Verifies supplied certificates against their reach-avoid tasks.
    Verify(Common),
    /// Synthesizes certificates for every partition.
    Synthesize(Common),
    /// Lists accepting runs, partitions and the switching automaton.
    Decompose(Common),
    /// Extracts gains, checks the small-gain condition and composes.
    Compose(Common),
    /// Probability bounds, for a project or for explicit constants.
    Bound {
        #[arg(long)]
        project: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        psi: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Simulates the closed loop from each start label.
    Simulate(Common),
    /// Runs every stage.
    Pipeline(Common),
}

fn set_jobs(jobs: Option<usize>) {
    if let Some(j) = jobs {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
}

fn run_project(c: &Common, default_last: Stage, verify_only: bool) -> Result<i32> {
    set_jobs(c.jobs);
    let mut project = Project::load(&c.project)?;
    project.override_with(c.seed, c.strict);
    if verify_only {
        match &mut project.certificates {
            CertificateSource::Supplied { verify, .. } if *verify == SuppliedCheck::Skip => {
                *verify = SuppliedCheck::Report
            }
            CertificateSource::Supplied { .. } => {}
            CertificateSource::Synthesize => {
                return Err(Error::InvalidInput("verify needs supplied certificates".into()))
            }
        }
    }
    let last = match &c.stage {
        Some(s) => Stage::parse(s)?,
        None => default_last,
    };
    let mut p = Pipeline::new(project);
    p.run(last);
    write_outputs(&p, c.out.as_deref())?;
    if let Some(f) = &p.report.failure {
        eprintln!("stage {} failed: {}", f.stage, f.message);
    }
    Ok(p.report.exit_code())
}

fn write_outputs(p: &Pipeline, out: Option<&Path>) -> Result<()> {
    let json = report_json(&p.report)?;
    let Some(dir) = out else {
        println!("{json}");
        return Ok(());
    };
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    if !p.certs.is_empty() {
        let b = serde_json::to_string_pretty(&p.bundle())?;
        std::fs::write(dir.join("certificates.json"), b + "\n")?;
    }
    for (label, tr) in &p.traces {
        let mut w = BufWriter::new(File::create(dir.join(format!("traces_{label}.csv")))?);
        write_traces_csv(tr, &p.net, &mut w)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Verify(c) => run_project(c, Stage::Certificates, true),
        Command::Synthesize(c) => run_project(c, Stage::Certificates, false),
        Command::Decompose(c) => run_project(c, Stage::Decompose, false),
        Command::Compose(c) => run_project(c, Stage::Compose, false),
        Command::Simulate(c) | Command::Pipeline(c) => run_project(c, Stage::Simulate, false),
        Command::Bound { project: Some(path), seed, strict, out, jobs, .. } => {
            let c = Common {
                project: path.clone(),
                stage: None,
                seed: *seed,
                strict: *strict,
                out: out.clone(),
                jobs: *jobs,
            };
            run_project(&c, Stage::Bounds, false)
        }
        Command::Bound { project: None, gamma, lambda, psi, kappa, horizon, .. } => {
            match (gamma, lambda, psi, kappa) {
                (Some(g), Some(l), Some(p), Some(k)) => reach_bound(&BoundInput {
                    gamma: *g,
                    lambda: *l,
                    psi: *p,
                    kappa_hat: *k,
                    horizon: *horizon,
                })
                .and_then(|b| {
                    println!("{}", serde_json::to_string_pretty(&b)?);
                    Ok(0)
                }),
                _ => Err(Error::InvalidInput(
                    "bound needs --project or all of --gamma --lambda --psi --kappa".into(),
                )),
            }
        }
    };
    match r {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
