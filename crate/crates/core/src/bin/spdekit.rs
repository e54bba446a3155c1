use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use spdekit::config::{parse_config_with_env, RunConfig, ENV_PREFIX};
use spdekit::harness::{
    build_problem, compare_fem_fvm, darcy_flow, report_stem, run_convergence, write_report, write_sidecar, ProblemKind,
};
use spdekit::mesh::{build_fv_grid, build_uniform_triangulation, Side};
use spdekit::noise::{generate_path, write_path_csv, NoiseSeed};
use spdekit::schemes::{CoupledRunner, LevelSpec, SchemeKind, SpaceKind};

#[derive(Parser, Debug)]
#[command(name = "spdekit", version, about = "Semi-implicit Euler-Maruyama experiments for parabolic SPDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for realizations (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// One realization of every configured scheme at the finest ladder step.
    Run,
    /// Monte-Carlo convergence study over the step-size ladder.
    Convergence,
    /// The convergence study on the FEM and FVM grids with the same noise.
    Compare,
    /// Solve the Darcy flow and write permeability, pressure and velocity.
    DarcyPrecompute,
    /// Write the spectral coefficients of one fine noise path.
    DumpNoise,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(path) => {
            std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?
        }
        None => String::new(),
    };
    let env: Vec<(String, String)> = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    let mut config = parse_config_with_env(&text, &env)?;
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    if let Some(threads) = cli.threads {
        config.set_threads(threads);
    }
    if let Some(out) = &cli.out {
        config.set_output_dir(out.clone());
    }
    Ok(config)
}

fn prepare_output(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let probe = dir.join(".spdekit_write_test");
    std::fs::write(&probe, b"").with_context(|| format!("output directory {} is not writable", dir.display()))?;
    std::fs::remove_file(&probe).ok();
    Ok(())
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_run(config: &RunConfig, dir: &Path, stem: &str) -> Result<()> {
    let plan = &config.plan;
    let problem = build_problem(plan)?;
    let steps = *plan.ladder_steps.last().expect("validated ladder");
    let fine = plan.reference_steps;
    let mut levels: Vec<LevelSpec> = plan.schemes.iter().map(|&kind| LevelSpec { ratio: fine / steps, kind }).collect();
    if plan.problem == ProblemKind::LinearRd {
        levels.push(LevelSpec { ratio: fine / steps, kind: SchemeKind::ExactLinear });
    }
    let runner = CoupledRunner::new(problem, plan.dt(fine), fine, &levels)?.with_snapshots(config.output.snapshot_every);
    let out = runner.run(&NoiseSeed::new(plan.seed, 0))?;
    let points = runner.problem().space.points();
    let names: Vec<&str> = levels.iter().map(|l| l.kind.name()).collect();
    write_csv(
        &dir.join(format!("{stem}.csv")),
        &format!("x,y,{}", names.join(",")),
        points.iter().enumerate().map(|(i, p)| {
            let values: Vec<String> = out.finals.iter().map(|f| f[i].to_string()).collect();
            format!("{},{},{}", p[0], p[1], values.join(","))
        }),
    )?;
    for (level, step, _t, field) in &out.snapshots {
        write_csv(
            &dir.join(format!("{stem}_snapshot_{}_m{step}.csv", names[*level])),
            "x,y,value",
            points.iter().zip(field).map(|(p, v)| format!("{},{},{v}", p[0], p[1])),
        )?;
    }
    Ok(())
}

fn cmd_darcy(config: &RunConfig, dir: &Path, stem: &str) -> Result<()> {
    let plan = &config.plan;
    let flow = darcy_flow(plan)?;
    flow.permeability.write_csv(&flow.mesh, &dir.join(format!("{stem}_permeability.csv")))?;
    flow.velocity.write_csv(&flow.mesh, &dir.join(format!("{stem}_velocity.csv")))?;
    write_csv(
        &dir.join(format!("{stem}_pressure.csv")),
        "cell,x,y,pressure",
        flow.mesh.cells.iter().zip(&flow.pressure).enumerate().map(|(c, (cell, p))| {
            format!("{c},{},{},{p}", cell.center[0], cell.center[1])
        }),
    )?;
    let div = flow.velocity.divergence(&flow.mesh);
    let inlet = -flow.velocity.side_flux(&flow.mesh, Side::Left);
    let outlet = flow.velocity.side_flux(&flow.mesh, Side::Right);
    let coarse_dt = plan.dt(plan.ladder_steps[0]);
    let summary = serde_json::json!({
        "max_abs_divergence": div.iter().fold(0.0f64, |m, d| m.max(d.abs())),
        "inlet_flux": inlet,
        "outlet_flux": outlet,
        "max_abs_face_flux": flow.velocity.max_abs_flux(),
        "cfl_coarsest_step": spdekit::fvm::cfl_number(&flow.mesh, &flow.velocity.normal_velocity, coarse_dt),
        "streak_cells": flow.permeability.in_streak.iter().filter(|&&s| s).count(),
    });
    std::fs::write(dir.join(format!("{stem}_summary.json")), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

fn cmd_dump_noise(config: &RunConfig, dir: &Path, stem: &str) -> Result<()> {
    let plan = &config.plan;
    let problem = build_problem(plan)?;
    let path = generate_path(
        &problem.noise,
        &problem.basis,
        &[problem.scheme_rates],
        plan.dt(plan.reference_steps),
        plan.reference_steps,
        NoiseSeed::new(plan.seed, 0),
    )?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.csv")))?);
    write_path_csv(&mut w, &problem.basis, &path, 0)?;
    w.flush()?;
    Ok(())
}

/// Optional dumps requested by the `[output]` section.
fn write_dumps(config: &RunConfig, dir: &Path, command: Command) -> Result<()> {
    let plan = &config.plan;
    let hash = plan.hash();
    if config.output.dump_mesh {
        let mesh_dir = dir.join(format!("mesh_{hash}"));
        std::fs::create_dir_all(&mesh_dir)?;
        let mesh = match plan.space {
            SpaceKind::Fem => build_uniform_triangulation(plan.l1, plan.l2, plan.nx, plan.ny)?,
            SpaceKind::Fvm => build_fv_grid(plan.l1, plan.l2, plan.nx, plan.ny)?,
        };
        mesh.write_csv(&mesh_dir)?;
    }
    if config.output.dump_velocity && plan.problem == ProblemKind::AdrDarcy && command != Command::DarcyPrecompute {
        cmd_darcy(config, dir, &format!("darcy_{hash}"))?;
    }
    if config.output.dump_noise && command != Command::DumpNoise {
        cmd_dump_noise(config, dir, &format!("noise_{hash}_s{}", plan.seed))?;
    }
    Ok(())
}

fn init_logging(verbosity: &str) {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(verbosity))
        .format_timestamp(None)
        .init();
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = load_config(&cli)?;
    if cli.print_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    init_logging(&config.output.verbosity);
    if config.output.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(config.output.threads).build_global()?;
    }
    let dir = config.output.dir.clone();
    prepare_output(&dir)?;

    let start = Instant::now();
    let plan = &config.plan;
    let base = format!("{}_{}_s{}", config.experiment, plan.hash(), plan.seed);
    log::info!("{:?}: plan {} seed {}", cli.command, plan.hash(), plan.seed);
    let stem = match cli.command {
        Command::Run => {
            let stem = format!("run_{base}");
            cmd_run(&config, &dir, &stem)?;
            stem
        }
        Command::Convergence => {
            let report = match run_convergence(plan) {
                Ok(r) => r,
                Err(failure) => {
                    if let Some(partial) = &failure.partial {
                        let files = write_report(&dir, &format!("{}_partial", config.experiment), partial)?;
                        log::error!("partial results written to {}", files.csv.display());
                    }
                    return Err(failure.into());
                }
            };
            let files = write_report(&dir, &config.experiment, &report)?;
            for s in &report.schemes {
                if let Some(fit) = s.fit {
                    log::info!("{}: rate {:.4} +/- {:.4}", s.scheme.name(), fit.rate, fit.half_width);
                }
            }
            log::info!("wrote {}", files.csv.display());
            report_stem(&config.experiment, &report)
        }
        Command::Compare => {
            let cmp = compare_fem_fvm(plan).map_err(anyhow::Error::from)?;
            write_report(&dir, &format!("{}_fem", config.experiment), &cmp.fem)?;
            write_report(&dir, &format!("{}_fvm", config.experiment), &cmp.fvm)?;
            let stem = format!("compare_{base}");
            std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&cmp)? + "\n")?;
            log::info!("max relative FEM/FVM discrepancy {:.4}", cmp.max_discrepancy());
            stem
        }
        Command::DarcyPrecompute => {
            if plan.space != SpaceKind::Fvm && plan.problem == ProblemKind::LinearRd {
                log::info!("darcy-precompute uses the cell grid regardless of the configured discretization");
            }
            let stem = format!("darcy_{}", plan.hash());
            cmd_darcy(&config, &dir, &stem)?;
            stem
        }
        Command::DumpNoise => {
            let stem = format!("noise_{}_s{}", plan.hash(), plan.seed);
            cmd_dump_noise(&config, &dir, &stem)?;
            stem
        }
    };
    write_dumps(&config, &dir, cli.command)?;
    write_sidecar(&dir.join(format!("{stem}.log")), start.elapsed().as_secs_f64())?;
    if !dir.join(format!("{stem}.log")).exists() {
        bail!("failed to write the sidecar log");
    }
    Ok(())
}
