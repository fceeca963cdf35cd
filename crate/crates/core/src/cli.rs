//! Command pipelines behind the `carleman-lab` binary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::carleman::{carleman_sweep, test_suite, CarlemanSweep};
use crate::config::ExperimentConfig;
use crate::energy::{energy, energy_at_midpoint, energy_bound_sides, snapshot_bound_sides};
use crate::error::{LabError, Result};
use crate::experiment::{twin_solve, Setup, TwinSolve};
use crate::inverse::{reconstruct, synthetic_data, Reconstruction};
use crate::observe::ObservationSet;
use crate::poincare::{cit_residual_of_twin, lemma_sides, proposition_of_twin, TransportBase};
use crate::report::{
    fmt_value, svg_line_plot, write_parts_csv, write_reports_csv, Axes, EstimateReport, Series,
};
use crate::stability::{stability_sides, stability_sweep, CoefficientPair, StabilitySweep};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Forward,
    VerifyCarleman,
    VerifyPoincare,
    VerifySnapshot,
    VerifyEnergy,
    VerifyStability,
    SweepStability,
    Reconstruct,
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub plot: bool,
    /// Overrides the output directory named in the configuration.
    pub out: Option<PathBuf>,
}

/// Files written by one run, in the order they were written.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

struct Emitter {
    dir: PathBuf,
    plot: bool,
    output: RunOutput,
}

impl Emitter {
    fn new(dir: PathBuf, plot: bool) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| {
            LabError::Config(format!("cannot create output directory {}: {e}", dir.display()))
        })?;
        Ok(Emitter {
            dir,
            plot,
            output: RunOutput::default(),
        })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| {
            LabError::Config(format!("cannot write {}: {e}", path.display()))
        })?;
        let mut out = BufWriter::new(file);
        body(&mut out)?;
        out.flush()?;
        self.output.files.push(path);
        Ok(())
    }

    fn svg(&mut self, name: &str, svg: Result<String>) -> Result<()> {
        if !self.plot {
            return Ok(());
        }
        let svg = svg?;
        self.write(name, |out| Ok(out.write_all(svg.as_bytes())?))
    }

    fn note(&mut self, line: String) {
        self.output.summary.push(line);
    }
}

/// Runs `command` and writes its reports below the output directory.
pub fn run(command: Command, config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutput> {
    let dir = options
        .out
        .clone()
        .unwrap_or_else(|| config.base_dir.join(&config.output_dir));
    let mut emit = Emitter::new(dir, options.plot)?;
    let ctx = Context::new(config)?;
    let steps: &[Command] = match command {
        Command::All => &[
            Command::Forward,
            Command::VerifyCarleman,
            Command::VerifyPoincare,
            Command::VerifySnapshot,
            Command::VerifyEnergy,
            Command::VerifyStability,
            Command::SweepStability,
            Command::Reconstruct,
        ],
        _ => std::slice::from_ref(&command),
    };
    for &step in steps {
        match step {
            Command::Forward => forward(&ctx, &mut emit)?,
            Command::VerifyCarleman => verify_carleman(&ctx, &mut emit)?,
            Command::VerifyPoincare => verify_poincare(&ctx, &mut emit)?,
            Command::VerifySnapshot => verify_snapshot(&ctx, &mut emit)?,
            Command::VerifyEnergy => verify_energy(&ctx, &mut emit)?,
            Command::VerifyStability => verify_stability(&ctx, &mut emit)?,
            Command::SweepStability => sweep(&ctx, &mut emit)?,
            Command::Reconstruct => reconstruction(&ctx, &mut emit)?,
            Command::All => unreachable!("expanded above"),
        }
    }
    Ok(emit.output)
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    setup: Setup,
    c: Vec<f64>,
    c_ref: Vec<f64>,
}

impl<'a> Context<'a> {
    fn new(config: &'a ExperimentConfig) -> Result<Self> {
        let setup = config.setup()?;
        let c = config.perturbed(&setup.grid)?;
        let c_ref = config.reference(&setup.grid)?;
        Ok(Context {
            config,
            setup,
            c,
            c_ref,
        })
    }

    fn twin(&self) -> Result<TwinSolve> {
        twin_solve(&self.setup, &self.c, &self.c_ref)
    }
}

fn forward(ctx: &Context, emit: &mut Emitter) -> Result<()> {
    let q = ctx.setup.solve(&ctx.c)?;
    emit.write("forward.csv", |out| q.write_csv(out))?;
    let data = synthetic_data(&ctx.setup, &ctx.c)?;
    emit.write("observations.csv", |out| data.write_csv(out))?;
    emit.note(format!(
        "forward: {} time slices, max |q| = {}",
        q.num_slices(),
        fmt_value(q.max_abs())
    ));
    Ok(())
}

pub fn carleman_plot(sweep: &CarlemanSweep, lambdas: &[f64]) -> Result<String> {
    let series: Vec<Series> = lambdas
        .iter()
        .map(|&lambda| Series {
            name: format!("lambda = {lambda}"),
            points: sweep
                .summary
                .iter()
                .filter(|r| r.lambda == lambda)
                .map(|r| (r.s, r.max_ratio))
                .collect(),
        })
        .collect();
    svg_line_plot(
        "Carleman estimate: worst ratio over the test suite",
        "s",
        "max LHS / RHS",
        &series,
        Axes {
            log_x: true,
            log_y: true,
        },
    )
}

fn verify_carleman(ctx: &Context, emit: &mut Emitter) -> Result<()> {
    let cfg = ctx.config;
    let suite = test_suite(cfg.carleman.tests, cfg.seed);
    let sweep = carleman_sweep(
        &ctx.c,
        &suite,
        &cfg.weights.s,
        &cfg.weights.lambda,
        &ctx.setup.grid,
        &ctx.setup.window,
        &cfg.sweep_setup(),
    )?;
    let rows: Vec<(String, &EstimateReport)> = sweep
        .entries
        .iter()
        .map(|e| (e.test_id.to_string(), &e.report))
        .collect();
    emit.write("carleman_sweep.csv", |out| write_reports_csv(&rows, out))?;
    emit.svg("carleman_ratio.svg", carleman_plot(&sweep, &cfg.weights.lambda))?;
    for r in &sweep.summary {
        emit.note(format!(
            "carleman: s = {}, lambda = {}: max ratio {} (test {})",
            r.s,
            r.lambda,
            fmt_value(r.max_ratio),
            r.argmax
        ));
    }
    Ok(())
}

fn verify_poincare(ctx: &Context, emit: &mut Emitter) -> Result<()> {
    let weights = ctx.config.point_weights(&ctx.setup)?;
    let twin = ctx.twin()?;
    let grid = &ctx.setup.grid;
    let base = TransportBase::new(&twin.base_snapshot(&ctx.setup)?.q, grid, &weights)?;
    let lemma = lemma_sides(&twin.gamma, &base, grid, &weights)?;
    let proposition = proposition_of_twin(&twin, &ctx.setup, &weights)?;
    let residual = cit_residual_of_twin(&twin, &ctx.setup)?;
    let mut parts = vec![("lemma", &lemma)];
    parts.extend(proposition.parts());
    emit.write("poincare.csv", |out| write_parts_csv(&parts, out))?;
    let res_max = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    emit.note(format!(
        "poincare: lemma ln ratio {}, proposition ln ratio {}, identity residual {}",
        fmt_value(lemma.ln_ratio),
        fmt_value(proposition.combined.ln_ratio),
        fmt_value(res_max)
    ));
    Ok(())
}

fn verify_snapshot(ctx: &Context, emit: &mut Emitter) -> Result<()> {
    let weights = ctx.config.point_weights(&ctx.setup)?;
    let twin = ctx.twin()?;
    let report = snapshot_bound_sides(&twin.y, &twin.gamma, &ctx.setup.grid, &weights)?;
    emit.write("snapshot.csv", |out| {
        write_reports_csv(&[("snapshot".to_string(), &report)], out)
    })?;
    emit.note(format!("snapshot: ln ratio {}", fmt_value(report.ln_ratio)));
    Ok(())
}

fn verify_energy(ctx: &Context, emit: &mut Emitter) -> Result<()> {
    let weights = ctx.config.point_weights(&ctx.setup)?;
    let twin = ctx.twin()?;
    let grid = &ctx.setup.grid;
    let curve = energy(&twin.y_window(&ctx.setup)?, &twin.c, grid, &weights)?;
    let mid = twin.y.window_slice(&ctx.setup.window, ctx.setup.window.midpoint_index())?;
    let second = energy_at_midpoint(mid, &twin.c, grid, &weights)?;
    let report = energy_bound_sides(&twin.y, &twin.c, &twin.gamma, grid, &weights)?;
    emit.write("energy.csv", |out| curve.write_csv(out))?;
    emit.write("energy_estimate.csv", |out| {
        write_reports_csv(&[("energy".to_string(), &report)], out)
    })?;
    let points = curve
        .times
        .iter()
        .zip(&curve.values)
        .map(|(&t, e)| (t, e.value()))
        .collect();
    emit.svg(
        "energy.svg",
        svg_line_plot(
            "Weighted energy E(t)",
            "t",
            "E(t)",
            &[Series {
                name: format!("s = {}, lambda = {}", curve.s, curve.lambda),
                points,
            }],
            Axes::default(),
        ),
    )?;
    emit.note(format!(
        "energy: ln E(T') = {} (second path {}), estimate ln ratio {}",
        fmt_value(curve.at_midpoint.ln()),
        fmt_value(second.ln()),
        fmt_value(report.ln_ratio)
    ));
    Ok(())
}

fn verify_stability(ctx: &Context, emit: &mut Emitter) -> Result<()> {
    let weights = ctx.config.point_weights(&ctx.setup)?;
    let pair = CoefficientPair::new(&ctx.setup.grid, &ctx.c, &ctx.c_ref)?;
    let report = stability_sides(&pair, &ctx.setup, &weights)?;
    let swapped = stability_sides(&pair.swapped(), &ctx.setup, &weights)?;
    let parts = [
        ("weighted", &report.weighted),
        ("weighted_flat", &report.weighted_flat),
        ("plain", &report.plain),
        ("swapped_weighted", &swapped.weighted),
        ("swapped_plain", &swapped.plain),
    ];
    emit.write("stability.csv", |out| write_parts_csv(&parts, out))?;
    emit.note(format!(
        "stability: weighted ln ratio {}, plain ratio {}",
        fmt_value(report.weighted.ln_ratio),
        fmt_value(report.plain.ratio)
    ));
    Ok(())
}

/// `ln lhs` against `ln` of the plain observation distance, one point per member.
pub fn sweep_plot(sweep: &StabilitySweep) -> Result<String> {
    let mut points: Vec<(f64, f64)> = sweep
        .rows
        .iter()
        .map(|r| (r.report.plain.rhs_total.value(), r.report.plain.lhs_total.value()))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    svg_line_plot(
        "Stability sweep",
        "observation distance",
        "|gamma|^2 in H^1",
        &[Series {
            name: "family".into(),
            points,
        }],
        Axes {
            log_x: true,
            log_y: true,
        },
    )
}

fn sweep(ctx: &Context, emit: &mut Emitter) -> Result<()> {
    let weights = ctx.config.point_weights(&ctx.setup)?;
    let family = ctx.config.family()?;
    let sweep = stability_sweep(&family, &ctx.c_ref, &ctx.setup, &weights)?;
    emit.write("sweep.csv", |out| sweep.write_csv(out))?;
    emit.svg("sweep.svg", sweep_plot(&sweep))?;
    let s = &sweep.summary;
    emit.note(format!(
        "sweep: empirical constant {} ({}), slope {}",
        fmt_value(s.max_plain_ratio),
        s.argmax_plain,
        fmt_value(s.slope)
    ));
    for name in &s.excluded {
        emit.note(format!("sweep: excluded {name} (zero perturbation)"));
    }
    Ok(())
}

pub fn convergence_plot(rec: &Reconstruction) -> Result<String> {
    let misfit = rec.log.iter().map(|l| (l.iter as f64, l.misfit)).collect();
    let mut series = vec![Series {
        name: "J".into(),
        points: misfit,
    }];
    if rec.log.iter().all(|l| l.h1_error.is_some()) {
        series.push(Series {
            name: "relative H1 error".into(),
            points: rec
                .log
                .iter()
                .map(|l| (l.iter as f64, l.h1_error.unwrap_or(f64::NAN)))
                .collect(),
        });
    }
    svg_line_plot(
        "Reconstruction convergence",
        "iteration",
        "value",
        &series,
        Axes {
            log_x: false,
            log_y: true,
        },
    )
}

fn reconstruction(ctx: &Context, emit: &mut Emitter) -> Result<()> {
    let cfg = ctx.config.inverse_config(ctx.c_ref.clone());
    let mut data: ObservationSet = synthetic_data(&ctx.setup, &ctx.c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    data.add_noise(cfg.sigma, ctx.config.inverse.noisy_snapshots, &mut rng)?;
    let rec = reconstruct(&data, &ctx.setup, &cfg, Some(&ctx.c))?;
    emit.write("recon_log.csv", |out| rec.write_csv(out))?;
    emit.write("reconstruction.csv", |out| {
        writeln!(out, "node,c_hat,c_true")?;
        for (node, (a, b)) in rec.c.iter().zip(&ctx.c).enumerate() {
            writeln!(out, "{node},{},{}", fmt_value(*a), fmt_value(*b))?;
        }
        Ok(())
    })?;
    emit.svg("recon.svg", convergence_plot(&rec))?;
    let last = rec.log.last().expect("log holds the initial state");
    emit.note(format!(
        "reconstruct: {} iterations, J = {}, relative H1 error {}",
        last.iter,
        fmt_value(last.misfit),
        last.h1_error.map_or("n/a".into(), fmt_value)
    ));
    Ok(())
}

/// Loads the configuration and runs `command` on a pool of `jobs` threads.
pub fn run_from_path(
    command: Command,
    config_path: &Path,
    options: &RunOptions,
    jobs: Option<usize>,
) -> Result<RunOutput> {
    let config = ExperimentConfig::load(config_path)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(LabError::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| LabError::Config(format!("cannot start worker threads: {e}")))?;
    pool.install(|| run(command, &config, options))
}
