//! Monte-Carlo strong-convergence studies.
//!
//! A study runs every realization of an [`ExperimentPlan`] on one fine noise path, steps each
//! requested scheme at each ladder step size on that path, and measures the discrete L2 error
//! at the final time against a reference: the exact mode-wise solution for the linear
//! problem, or the modified scheme at the reference step size for the ADR problem.
//! Realizations run in parallel; results are aggregated in realization order so reports do
//! not depend on scheduling.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::darcy::{reconstruct_velocity, solve_pressure, PermeabilityField, StreakGeometry, VelocityField};
use crate::error::{invalid, Error, Result};
use crate::fem::{BoundaryCondition, BoundaryConditions, OperatorSpec};
use crate::fvm::{assemble_tpfa, cfl_number, upwind_advection, CellCoefficient};
use crate::mesh::{build_fv_grid, build_uniform_triangulation, Mesh};
use crate::noise::{NoiseSeed, NoiseSpec, OuRates, SpectralBasis, ZeroEigenvalue, ZeroModeWeight};
use crate::schemes::{
    AdvectionReactionDrift, CoupledRunner, Discretization, Drift, LevelSpec, LinearDrift, ProblemDef, SchemeKind,
    SpaceKind, ZeroDrift,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// `dX = (D Laplacian X + c X) dt + dW` with homogeneous Neumann conditions.
    LinearRd,
    /// Advection by a Darcy velocity, diffusion, saturating reaction and inflow `X = 1` at `x = 0`.
    AdrDarcy,
}

/// Whether all schemes share one noise path per realization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    Coupled,
    /// Each scheme gets its own stream (and its own reference).
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub problem: ProblemKind,
    pub space: SpaceKind,
    pub nx: usize,
    pub ny: usize,
    pub l1: f64,
    pub l2: f64,
    pub diffusion: f64,
    /// Linear reaction coefficient `c` of the linear problem.
    pub reaction: f64,
    /// Treat `c X` implicitly and inside the convolution instead of explicitly in `F`.
    pub fold_reaction: bool,
    pub k_base: f64,
    pub contrast: f64,
    pub streak_centers: Vec<f64>,
    pub streak_height: f64,
    /// Noise modes per axis.
    pub modes: usize,
    pub r: f64,
    pub delta: f64,
    pub zero_mode: ZeroModeWeight,
    /// Shift all convolution rates by this value instead of the Brownian limit at rate zero.
    pub perturb_epsilon: Option<f64>,
    pub amplitude: f64,
    pub t_final: f64,
    /// Steps over `[0, t_final]` per ladder entry, coarse to fine.
    pub ladder_steps: Vec<usize>,
    /// Steps of the fine noise path (and of the ADR reference solution).
    pub reference_steps: usize,
    pub realizations: usize,
    pub seed: u64,
    pub coupling: Coupling,
    pub schemes: Vec<SchemeKind>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self::linear_rd()
    }
}

impl ExperimentPlan {
    pub fn linear_rd() -> Self {
        Self {
            problem: ProblemKind::LinearRd,
            space: SpaceKind::Fem,
            nx: 50,
            ny: 50,
            l1: 1.0,
            l2: 1.0,
            diffusion: 1.0,
            reaction: -0.5,
            fold_reaction: false,
            k_base: 0.01,
            contrast: 100.0,
            streak_centers: vec![0.25, 0.5, 0.75],
            streak_height: 0.1,
            modes: 50,
            r: 2.0,
            delta: 0.05,
            zero_mode: ZeroModeWeight::Unit,
            perturb_epsilon: None,
            amplitude: 1.0,
            t_final: 1.0,
            ladder_steps: vec![32, 64, 128, 256, 512],
            reference_steps: 512,
            realizations: 30,
            seed: 2024,
            coupling: Coupling::Coupled,
            schemes: vec![SchemeKind::Modified, SchemeKind::Standard],
        }
    }

    pub fn adr_darcy() -> Self {
        Self {
            problem: ProblemKind::AdrDarcy,
            space: SpaceKind::Fvm,
            diffusion: 0.01,
            reaction: 0.0,
            ladder_steps: vec![64, 128, 256, 512],
            reference_steps: 4096,
            realizations: 100,
            schemes: vec![SchemeKind::Modified],
            ..Self::linear_rd()
        }
    }

    pub fn dt(&self, steps: usize) -> f64 {
        self.t_final / steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.modes == 0 {
            return Err(invalid("grid size and mode count must be positive"));
        }
        for (name, v) in [("l1", self.l1), ("l2", self.l2), ("diffusion", self.diffusion), ("t_final", self.t_final)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.r != 1.0 && self.r != 2.0 {
            return Err(invalid(format!("r must be one of {{1, 2}}, got {}", self.r)));
        }
        NoiseSpec { r: self.r, delta: self.delta, zero_mode: self.zero_mode, amplitude: self.amplitude }.validate()?;
        if let Some(e) = self.perturb_epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(invalid(format!("perturbation epsilon must be positive, got {e}")));
            }
        }
        validate_ladder(&self.ladder_steps, self.reference_steps)?;
        if self.realizations < 2 {
            return Err(invalid("at least 2 realizations are needed for a standard error"));
        }
        if self.schemes.is_empty() {
            return Err(invalid("no schemes requested"));
        }
        for (i, s) in self.schemes.iter().enumerate() {
            if *s == SchemeKind::ExactLinear {
                return Err(invalid("exact_linear is the reference, not a ladder scheme"));
            }
            if self.schemes[..i].contains(s) {
                return Err(invalid(format!("scheme {} listed twice", s.name())));
            }
        }
        match self.problem {
            ProblemKind::LinearRd => {
                if !(self.reaction <= 0.0 && self.reaction.is_finite()) {
                    return Err(invalid(format!("reaction coefficient must be non-positive, got {}", self.reaction)));
                }
            }
            ProblemKind::AdrDarcy => {
                if self.space != SpaceKind::Fvm {
                    return Err(invalid("adr_darcy requires the fvm discretization"));
                }
                if self.reference_steps == *self.ladder_steps.last().unwrap() {
                    return Err(invalid("adr_darcy needs a reference step finer than the ladder"));
                }
                if !(self.k_base > 0.0 && self.contrast > 0.0 && self.streak_height > 0.0) {
                    return Err(invalid("streak permeability, contrast and height must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the plan with the seed cleared.
    pub fn hash(&self) -> String {
        let mut p = self.clone();
        p.seed = 0;
        let json = serde_json::to_string(&p).expect("plan serializes");
        Sha256::digest(json.as_bytes()).iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec { r: self.r, delta: self.delta, zero_mode: self.zero_mode, amplitude: self.amplitude }
    }

    pub fn streak_geometry(&self) -> StreakGeometry {
        StreakGeometry {
            centers: self.streak_centers.clone(),
            height: self.streak_height,
            k_base: self.k_base,
            contrast: self.contrast,
        }
    }

    fn zero_eigenvalue(&self) -> ZeroEigenvalue {
        self.perturb_epsilon.map_or(ZeroEigenvalue::BrownianLimit, ZeroEigenvalue::Perturb)
    }
}

/// Ladder steps must be increasing, each a multiple of the previous, and divide the reference.
pub fn validate_ladder(ladder_steps: &[usize], reference_steps: usize) -> Result<()> {
    if ladder_steps.first().is_none_or(|&s| s == 0) {
        return Err(invalid("ladder step counts must be positive"));
    }
    for w in ladder_steps.windows(2) {
        if w[1] <= w[0] || w[1] % w[0] != 0 {
            return Err(invalid(format!(
                "dt ladder entries must refine by integer factors: T/{} does not divide T/{}",
                w[1], w[0]
            )));
        }
    }
    let finest = *ladder_steps.last().unwrap();
    if reference_steps % finest != 0 {
        return Err(invalid(format!("reference step T/{reference_steps} is not an integer refinement of T/{finest}")));
    }
    if ladder_steps.len() < 3 {
        return Err(invalid(format!("a rate fit needs at least 3 ladder entries, got {}", ladder_steps.len())));
    }
    Ok(())
}

/// Pressure, velocity and permeability of the Darcy flow driving the ADR problem.
#[derive(Clone, Debug)]
pub struct DarcyFlow {
    pub mesh: Mesh,
    pub permeability: PermeabilityField,
    pub pressure: Vec<f64>,
    pub velocity: VelocityField,
}

pub fn darcy_flow(plan: &ExperimentPlan) -> Result<DarcyFlow> {
    let mesh = build_fv_grid(plan.l1, plan.l2, plan.nx, plan.ny)?;
    let permeability = PermeabilityField::streaks(&mesh, &plan.streak_geometry())?;
    let pressure = solve_pressure(&mesh, &permeability)?;
    let velocity = reconstruct_velocity(&mesh, &permeability, &pressure)?;
    Ok(DarcyFlow { mesh, permeability, pressure, velocity })
}

fn inflow_bc() -> BoundaryConditions {
    BoundaryConditions { left: BoundaryCondition::Dirichlet(1.0), ..BoundaryConditions::all_neumann() }
}

pub fn build_problem(plan: &ExperimentPlan) -> Result<ProblemDef> {
    plan.validate()?;
    let basis = SpectralBasis::new(plan.modes, plan.l1, plan.l2)?;
    let noise = plan.noise_spec();
    let zero = plan.zero_eigenvalue();
    match plan.problem {
        ProblemKind::LinearRd => {
            let space = match plan.space {
                SpaceKind::Fem => Discretization::fem(
                    build_uniform_triangulation(plan.l1, plan.l2, plan.nx, plan.ny)?,
                    &OperatorSpec::laplacian(plan.diffusion),
                )?,
                SpaceKind::Fvm => {
                    let mesh = build_fv_grid(plan.l1, plan.l2, plan.nx, plan.ny)?;
                    let op = assemble_tpfa(&mesh, &CellCoefficient::Constant(plan.diffusion), &BoundaryConditions::all_neumann())?;
                    Discretization::fvm(mesh, &op)?
                }
            };
            let c = plan.reaction;
            let (drift, shift): (Arc<dyn Drift>, f64) =
                if plan.fold_reaction { (Arc::new(ZeroDrift), -c) } else { (Arc::new(LinearDrift(c)), 0.0) };
            let n = space.dof_count();
            Ok(ProblemDef {
                space: Arc::new(space),
                drift,
                implicit_shift: shift,
                x0: vec![0.0; n],
                noise,
                basis,
                scheme_rates: OuRates { diffusion: plan.diffusion, shift, zero },
                exact_rates: Some(OuRates { diffusion: plan.diffusion, shift: -c, zero: ZeroEigenvalue::BrownianLimit }),
            })
        }
        ProblemKind::AdrDarcy => {
            let flow = darcy_flow(plan)?;
            let op = assemble_tpfa(&flow.mesh, &CellCoefficient::Constant(plan.diffusion), &inflow_bc())?;
            let upwind = upwind_advection(&flow.mesh, &flow.velocity.normal_velocity, &inflow_bc())?;
            let cfl = cfl_number(&flow.mesh, &flow.velocity.normal_velocity, plan.dt(plan.ladder_steps[0]));
            if cfl > 1.0 {
                log::warn!("advective CFL number {cfl:.3} at the coarsest step exceeds 1; explicit upwinding may be unstable");
            }
            let areas = op.cell_areas.clone();
            let space = Discretization::fvm(flow.mesh, &op)?;
            let n = space.dof_count();
            Ok(ProblemDef {
                space: Arc::new(space),
                drift: Arc::new(AdvectionReactionDrift { upwind, boundary: op, areas, with_reaction: true }),
                implicit_shift: 0.0,
                x0: vec![0.0; n],
                noise,
                basis,
                scheme_rates: OuRates { diffusion: plan.diffusion, shift: 0.0, zero },
                exact_rates: None,
            })
        }
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

/// `(sqrt(mean e^2), standard error)` with the standard error from the delta method.
pub fn estimate_rms_error(errors: &[f64]) -> Result<(f64, f64)> {
    let n = errors.len();
    if n < 2 {
        return Err(invalid(format!("need at least 2 error samples, got {n}")));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(invalid("error samples must be finite"));
    }
    let nf = n as f64;
    let mean_sq = compensated_sum(errors.iter().map(|e| e * e)) / nf;
    let var_sq = compensated_sum(errors.iter().map(|e| (e * e - mean_sq).powi(2))) / (nf - 1.0);
    let rms = mean_sq.sqrt();
    let se = if rms > 0.0 { (var_sq / nf).sqrt() / (2.0 * rms) } else { 0.0 };
    Ok((rms, se))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    /// Slope of `ln(error)` against `ln(dt)`.
    pub rate: f64,
    /// 95% confidence half-width of the slope.
    pub half_width: f64,
    pub intercept: f64,
    pub points: usize,
    /// Whether the points were weighted by `(rms / se)^2`.
    pub weighted: bool,
}

/// Log-log least squares, weighted by inverse variance of `ln(rms)` when all standard errors
/// are positive.
pub fn fit_rate(dts: &[f64], rms: &[f64], std_errors: &[f64]) -> Result<RateFit> {
    let n = dts.len();
    if rms.len() != n || std_errors.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: rms.len().min(std_errors.len()) });
    }
    if n < 3 {
        return Err(invalid(format!("a rate fit needs at least 3 points, got {n}")));
    }
    if dts.iter().chain(rms).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid("rate fit needs positive step sizes and errors"));
    }
    let weighted = std_errors.iter().all(|s| *s > 0.0 && s.is_finite());
    let w: Vec<f64> = (0..n).map(|i| if weighted { (rms[i] / std_errors[i]).powi(2) } else { 1.0 }).collect();
    let x: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = rms.iter().map(|e| e.ln()).collect();
    let sw = compensated_sum(w.iter().copied());
    let xm = compensated_sum((0..n).map(|i| w[i] * x[i])) / sw;
    let ym = compensated_sum((0..n).map(|i| w[i] * y[i])) / sw;
    let sxx = compensated_sum((0..n).map(|i| w[i] * (x[i] - xm).powi(2)));
    if sxx <= 0.0 {
        return Err(invalid("rate fit needs distinct step sizes"));
    }
    let sxy = compensated_sum((0..n).map(|i| w[i] * (x[i] - xm) * (y[i] - ym)));
    let rate = sxy / sxx;
    let intercept = ym - rate * xm;
    let ssr = compensated_sum((0..n).map(|i| w[i] * (y[i] - intercept - rate * x[i]).powi(2)));
    let dof = (n - 2) as f64;
    let se_slope = (ssr / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| invalid(e.to_string()))?.inverse_cdf(0.975);
    Ok(RateFit { rate, half_width: t * se_slope, intercept, points: n, weighted })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelResult {
    pub steps: usize,
    pub dt: f64,
    pub rms_error: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemeResult {
    pub scheme: SchemeKind,
    /// Coarse to fine.
    pub levels: Vec<LevelResult>,
    /// `None` when some error is zero (for example without noise).
    pub fit: Option<RateFit>,
    /// Per-level error of every realization, in realization order.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

impl SchemeResult {
    fn fit_levels(levels: &[LevelResult]) -> Result<RateFit> {
        let dts: Vec<f64> = levels.iter().map(|l| l.dt).collect();
        let rms: Vec<f64> = levels.iter().map(|l| l.rms_error).collect();
        let se: Vec<f64> = levels.iter().map(|l| l.std_error).collect();
        fit_rate(&dts, &rms, &se)
    }

    /// The fit with the coarsest ladder point removed.
    pub fn fit_without_coarsest(&self) -> Result<RateFit> {
        Self::fit_levels(&self.levels[1..])
    }

    pub fn level(&self, steps: usize) -> Option<&LevelResult> {
        self.levels.iter().find(|l| l.steps == steps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub plan: ExperimentPlan,
    pub plan_hash: String,
    pub seed: u64,
    pub coupling: Coupling,
    /// `exact_linear` or `modified@<steps>`.
    pub reference: String,
    pub realizations: usize,
    pub schemes: Vec<SchemeResult>,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl ConvergenceReport {
    pub fn scheme(&self, kind: SchemeKind) -> Option<&SchemeResult> {
        self.schemes.iter().find(|s| s.scheme == kind)
    }
}

/// A study aborted by a failing realization, with whatever completed before it.
#[derive(Debug, thiserror::Error)]
#[error("realization {realization} failed: {source}")]
pub struct ExperimentFailure {
    pub realization: usize,
    #[source]
    pub source: Error,
    /// Aggregate of the realizations that completed, when there were at least two.
    pub partial: Option<Box<ConvergenceReport>>,
}

impl From<Error> for ExperimentFailure {
    fn from(source: Error) -> Self {
        Self { realization: 0, source, partial: None }
    }
}

/// One noise stream driving some ladder entries and their reference.
struct Group {
    stream: u64,
    runner: CoupledRunner,
    /// `(entry, level)` pairs: which level of the runner fills which report entry.
    entries: Vec<(usize, usize)>,
    /// Level holding the ADR reference; `None` means the exact solution.
    reference_level: Option<usize>,
}

fn build_groups(plan: &ExperimentPlan, problem: &ProblemDef) -> Result<Vec<Group>> {
    let fine_dt = plan.dt(plan.reference_steps);
    let level = |steps: usize, kind| LevelSpec { ratio: plan.reference_steps / steps, kind };
    let scheme_sets: Vec<(u64, Vec<usize>)> = match plan.coupling {
        Coupling::Coupled => vec![(0, (0..plan.schemes.len()).collect())],
        Coupling::Independent => (0..plan.schemes.len()).map(|s| (s as u64, vec![s])).collect(),
    };
    scheme_sets
        .into_iter()
        .map(|(stream, schemes)| {
            let mut levels = Vec::new();
            let mut entries = Vec::new();
            for s in schemes {
                for (li, &steps) in plan.ladder_steps.iter().enumerate() {
                    entries.push((s * plan.ladder_steps.len() + li, levels.len()));
                    levels.push(level(steps, plan.schemes[s]));
                }
            }
            let reference_level = match plan.problem {
                ProblemKind::LinearRd => None,
                ProblemKind::AdrDarcy => {
                    levels.push(level(plan.reference_steps, SchemeKind::Modified));
                    Some(levels.len() - 1)
                }
            };
            let runner = CoupledRunner::new(problem.clone(), fine_dt, plan.reference_steps, &levels)?;
            Ok(Group { stream, runner, entries, reference_level })
        })
        .collect()
}

fn run_one(plan: &ExperimentPlan, groups: &[Group], realization: usize, entries: usize) -> Result<Vec<f64>> {
    let mut errors = vec![0.0; entries];
    for g in groups {
        let seed = NoiseSeed::new(plan.seed, realization as u64).with_stream(g.stream);
        let out = g.runner.run(&seed)?;
        let reference = match g.reference_level {
            Some(l) => &out.finals[l],
            None => out.exact.as_ref().ok_or(Error::NotLinear)?,
        };
        let space = &g.runner.problem().space;
        for &(e, l) in &g.entries {
            let err = space.l2_distance(&out.finals[l], reference)?;
            if !err.is_finite() {
                return Err(invalid(format!("non-finite error at level {l}")));
            }
            errors[e] = err;
        }
    }
    Ok(errors)
}

fn aggregate(plan: &ExperimentPlan, samples: &[Vec<f64>], wall: f64) -> Result<ConvergenceReport> {
    let nl = plan.ladder_steps.len();
    let schemes = plan
        .schemes
        .iter()
        .enumerate()
        .map(|(s, &kind)| {
            let mut levels = Vec::with_capacity(nl);
            let mut per_level = Vec::with_capacity(nl);
            for (li, &steps) in plan.ladder_steps.iter().enumerate() {
                let column: Vec<f64> = samples.iter().map(|row| row[s * nl + li]).collect();
                let (rms_error, std_error) = estimate_rms_error(&column)?;
                levels.push(LevelResult { steps, dt: plan.dt(steps), rms_error, std_error });
                per_level.push(column);
            }
            let fit = SchemeResult::fit_levels(&levels).ok();
            Ok(SchemeResult { scheme: kind, levels, fit, samples: per_level })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport {
        plan: plan.clone(),
        plan_hash: plan.hash(),
        seed: plan.seed,
        coupling: plan.coupling,
        reference: match plan.problem {
            ProblemKind::LinearRd => SchemeKind::ExactLinear.name().to_string(),
            ProblemKind::AdrDarcy => format!("modified@{}", plan.reference_steps),
        },
        realizations: samples.len(),
        schemes,
        wall_clock_seconds: wall,
    })
}

/// Runs the whole study on the current rayon pool.
pub fn run_convergence(plan: &ExperimentPlan) -> std::result::Result<ConvergenceReport, ExperimentFailure> {
    let start = Instant::now();
    let problem = build_problem(plan)?;
    let groups = build_groups(plan, &problem)?;
    let entries = plan.schemes.len() * plan.ladder_steps.len();
    let results: Vec<Result<Vec<f64>>> = (0..plan.realizations)
        .into_par_iter()
        .map(|r| {
            let res = run_one(plan, &groups, r, entries);
            log::debug!("realization {r} done");
            res
        })
        .collect();
    let mut samples = Vec::with_capacity(results.len());
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(e) => samples.push(e),
            Err(source) => {
                let partial = if samples.len() >= 2 {
                    aggregate(plan, &samples, start.elapsed().as_secs_f64()).ok().map(Box::new)
                } else {
                    None
                };
                return Err(ExperimentFailure { realization: r, source, partial });
            }
        }
    }
    Ok(aggregate(plan, &samples, start.elapsed().as_secs_f64())?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FemFvmComparison {
    pub fem: ConvergenceReport,
    pub fvm: ConvergenceReport,
    /// `(scheme, |fem - fvm| / fem per ladder entry)`.
    pub relative_discrepancy: Vec<(SchemeKind, Vec<f64>)>,
}

impl FemFvmComparison {
    pub fn max_discrepancy(&self) -> f64 {
        self.relative_discrepancy.iter().flat_map(|(_, d)| d).fold(0.0, |m, d| m.max(*d))
    }
}

/// The same plan on the P1 mesh and the cell grid with the same seeds.
pub fn compare_fem_fvm(plan: &ExperimentPlan) -> std::result::Result<FemFvmComparison, ExperimentFailure> {
    if plan.problem != ProblemKind::LinearRd {
        return Err(invalid("the FEM/FVM comparison is defined for the linear problem").into());
    }
    let fem = run_convergence(&ExperimentPlan { space: SpaceKind::Fem, ..plan.clone() })?;
    let fvm = run_convergence(&ExperimentPlan { space: SpaceKind::Fvm, ..plan.clone() })?;
    let relative_discrepancy = fem
        .schemes
        .iter()
        .zip(&fvm.schemes)
        .map(|(a, b)| {
            let d = a
                .levels
                .iter()
                .zip(&b.levels)
                .map(|(x, y)| (x.rms_error - y.rms_error).abs() / x.rms_error)
                .collect();
            (a.scheme, d)
        })
        .collect();
    Ok(FemFvmComparison { fem, fvm, relative_discrepancy })
}

/// Paths written by [`write_report`].
#[derive(Clone, Debug)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub log: PathBuf,
}

pub fn report_stem(prefix: &str, report: &ConvergenceReport) -> String {
    format!("{prefix}_{}_s{}", report.plan_hash, report.seed)
}

pub fn write_report_csv<W: Write>(out: &mut W, report: &ConvergenceReport) -> Result<()> {
    writeln!(out, "scheme,dt,rms_error,std_error")?;
    for s in &report.schemes {
        for l in &s.levels {
            writeln!(out, "{},{},{},{}", s.scheme.name(), l.dt, l.rms_error, l.std_error)?;
        }
    }
    Ok(())
}

/// Writes `<stem>.csv`, `<stem>.json` and a `<stem>.log` sidecar holding the timing.
pub fn write_report(dir: &Path, prefix: &str, report: &ConvergenceReport) -> Result<ReportFiles> {
    std::fs::create_dir_all(dir)?;
    let stem = report_stem(prefix, report);
    let files = ReportFiles {
        csv: dir.join(format!("{stem}.csv")),
        json: dir.join(format!("{stem}.json")),
        log: dir.join(format!("{stem}.log")),
    };
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&files.csv)?);
    write_report_csv(&mut csv, report)?;
    csv.flush()?;
    let json = serde_json::to_string_pretty(report).map_err(|e| invalid(e.to_string()))?;
    std::fs::write(&files.json, json + "\n")?;
    write_sidecar(&files.log, report.wall_clock_seconds)?;
    Ok(files)
}

/// Timestamp and wall-clock time, kept out of the deterministic outputs.
pub fn write_sidecar(path: &Path, wall_clock_seconds: f64) -> Result<()> {
    let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    std::fs::write(path, format!("unix_time={now}\nwall_clock_seconds={wall_clock_seconds:.3}\n"))?;
    Ok(())
}
