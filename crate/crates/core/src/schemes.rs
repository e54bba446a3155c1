//! Time stepping: the modified semi-implicit Euler-Maruyama scheme, the standard
//! semi-implicit baseline and the exact mode-wise solution of linear problems.
//!
//! With `S = (M + dt K')^{-1} M` the Galerkin form of `(I - dt A_h)^{-1}`:
//!
//! ```text
//! modified: X_{m+1} = S (X_m + dt F(X_m) - O(t_m)) + O(t_{m+1})
//! standard: X_{m+1} = S (X_m + dt F(X_m) + dW_m)
//! ```
//!
//! where `O` and `dW` are the truncated spectral noise sampled at the degrees of freedom.

use std::sync::Arc;

use crate::error::{check_len, invalid, Error, Result};
use crate::fem::{self, ImplicitSystem, OperatorSpec};
use crate::fvm::{self, FvOperator, UpwindOperator};
use crate::mesh::{Mesh, Point};
use crate::noise::{GridEvaluator, NoiseModel, NoiseProcess, NoiseSeed, NoiseSpec, OuRates, SpectralBasis, advance};
use crate::sparse::{cg_solve_into, BandedCholesky, CgOptions, CsrMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Fem,
    Fvm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Modified,
    Standard,
    ExactLinear,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Modified => "modified",
            SchemeKind::Standard => "standard",
            SchemeKind::ExactLinear => "exact_linear",
        }
    }
}

/// Degrees of freedom, mass and stiffness of one spatial discretization.
///
/// Degrees of freedom form a tensor grid `xs x ys` numbered `ix + iy * xs.len()`:
/// mesh vertices for FEM, cell centers for FVM.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub kind: SpaceKind,
    pub mesh: Mesh,
    pub mass: CsrMatrix,
    /// Symmetric positive semi-definite part of `-A_h`.
    pub stiffness: CsrMatrix,
    pub dirichlet: Vec<(usize, f64)>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Discretization {
    pub fn fem(mesh: Mesh, spec: &OperatorSpec) -> Result<Self> {
        let op = fem::assemble(&mesh, spec)?;
        let (xs, ys) = mesh.vertex_axes();
        let stiffness = if op.reaction != 0.0 { op.stiffness.lin_comb(1.0, &op.mass, op.reaction)? } else { op.stiffness };
        Ok(Self { kind: SpaceKind::Fem, mass: op.mass, stiffness, dirichlet: op.dirichlet, xs, ys, mesh })
    }

    /// Uses the Neumann-only part of `op`; Dirichlet faces are left to the drift.
    pub fn fvm(mesh: Mesh, op: &FvOperator) -> Result<Self> {
        let (xs, ys) = mesh.cell_axes();
        Ok(Self {
            kind: SpaceKind::Fvm,
            mass: op.mass(),
            stiffness: op.k_neumann.clone(),
            dirichlet: Vec::new(),
            xs,
            ys,
            mesh,
        })
    }

    pub fn dof_count(&self) -> usize {
        self.mass.n_rows()
    }

    pub fn points(&self) -> Vec<Point> {
        self.ys.iter().flat_map(|&y| self.xs.iter().map(move |&x| [x, y])).collect()
    }

    /// Discrete L2 norm squared: `v . M v` (FEM) or `sum area v^2` (FVM).
    pub fn l2_norm_sq(&self, v: &[f64]) -> Result<f64> {
        check_len(self.dof_count(), v.len())?;
        self.mass.quadratic_form(v)
    }

    pub fn l2_distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_len(a.len(), b.len())?;
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Ok(self.l2_norm_sq(&d)?.max(0.0).sqrt())
    }

    pub fn implicit_system(&self, dt: f64, shift: f64) -> Result<ImplicitSystem> {
        ImplicitSystem::new(&self.mass, &self.stiffness, shift, &self.dirichlet, dt)
    }
}

/// The explicit part `F` of the drift, evaluated on nodal / cell values.
pub trait Drift: Send + Sync {
    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// `Some(c)` when `F(u) = c u`.
    fn linear_coefficient(&self) -> Option<f64> {
        None
    }
}

pub struct ZeroDrift;

impl Drift for ZeroDrift {
    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }

    fn linear_coefficient(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// `F(u) = c u`
pub struct LinearDrift(pub f64);

impl Drift for LinearDrift {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().zip(x).for_each(|(o, x)| *o = self.0 * x);
    }

    fn linear_coefficient(&self) -> Option<f64> {
        Some(self.0)
    }
}

/// Wraps a closure as a nonlinear drift.
pub struct FnDrift<F>(pub F);

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> Drift for FnDrift<F> {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.0)(x, out)
    }
}

/// Finite-volume drift `-div(q X)/|c| + b(X)/|c| - X/(|X| + 1)`.
pub struct AdvectionReactionDrift {
    pub upwind: UpwindOperator,
    pub boundary: FvOperator,
    pub areas: Vec<f64>,
    pub with_reaction: bool,
}

impl Drift for AdvectionReactionDrift {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.upwind.matrix.spmv_unchecked(x, out);
        let mut b = vec![0.0; x.len()];
        self.boundary.boundary_functional_into(x, &mut b);
        for c in 0..x.len() {
            let mut v = (b[c] - out[c] - self.upwind.inflow[c]) / self.areas[c];
            if self.with_reaction {
                v += fvm::reaction(x[c]);
            }
            out[c] = v;
        }
    }
}

/// Everything needed to step one SPDE realization.
#[derive(Clone)]
pub struct ProblemDef {
    pub space: Arc<Discretization>,
    pub drift: Arc<dyn Drift>,
    /// Constant decay folded into the implicit matrix: `M + dt (K + shift M)`.
    pub implicit_shift: f64,
    pub x0: Vec<f64>,
    pub noise: NoiseSpec,
    pub basis: SpectralBasis,
    /// Decay rates of the convolution used by the modified scheme (the linear operator's spectrum).
    pub scheme_rates: OuRates,
    /// Decay rates of the full linear drift, when the problem is linear with a known spectrum.
    pub exact_rates: Option<OuRates>,
}

impl ProblemDef {
    pub fn validate(&self) -> Result<()> {
        check_len(self.space.dof_count(), self.x0.len())?;
        if !(self.implicit_shift >= 0.0) {
            return Err(invalid("implicit shift must be non-negative"));
        }
        let mut f0 = vec![0.0; self.x0.len()];
        self.drift.eval(&vec![0.0; self.x0.len()], &mut f0);
        if f0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("drift is not finite at zero"));
        }
        self.noise.validate()
    }

    /// Noise model with the scheme channel first and, when available, the exact channel
    /// (aliased to the scheme channel when both have the same rates).
    pub fn noise_channels(&self) -> Result<(NoiseModel, Option<usize>)> {
        let mut channels = vec![self.scheme_rates];
        let exact = match self.exact_rates {
            None => None,
            Some(r) if r.rates(&self.basis) == self.scheme_rates.rates(&self.basis) => Some(0),
            Some(r) => {
                channels.push(r);
                Some(1)
            }
        };
        Ok((NoiseModel::from_basis(&self.basis, &self.noise, &channels)?, exact))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeState {
    pub x: Vec<f64>,
    pub m: usize,
    pub t: f64,
    pub kind: SchemeKind,
}

impl SchemeState {
    pub fn initial(problem: &ProblemDef, kind: SchemeKind) -> Self {
        Self { x: problem.x0.clone(), m: 0, t: 0.0, kind }
    }
}

/// How the implicit system is solved.
#[derive(Clone, Debug)]
pub enum LinearSolver {
    Cg(CgOptions),
    /// Factored once; used when the band storage is small.
    Banded(BandedCholesky),
}

/// Band storage limit (entries) for choosing the direct solver.
const BAND_STORAGE_LIMIT: usize = 20_000_000;

/// The implicit solve for one step size, reused across steps and realizations.
#[derive(Clone, Debug)]
pub struct Stepper {
    pub system: ImplicitSystem,
    pub dt: f64,
    pub solver: LinearSolver,
}

impl Stepper {
    /// Uses a banded Cholesky factor when the matrix bandwidth allows, else CG.
    pub fn new(problem: &ProblemDef, dt: f64) -> Result<Self> {
        let system = problem.space.implicit_system(dt, problem.implicit_shift)?;
        let n = system.matrix.n_rows();
        let bw = BandedCholesky::bandwidth(&system.matrix);
        let solver = if n.saturating_mul(bw + 1) <= BAND_STORAGE_LIMIT {
            LinearSolver::Banded(BandedCholesky::factor(&system.matrix)?)
        } else {
            LinearSolver::Cg(CgOptions::default())
        };
        Ok(Self { system, dt, solver })
    }

    pub fn with_cg(problem: &ProblemDef, dt: f64, cg: CgOptions) -> Result<Self> {
        Ok(Self { system: problem.space.implicit_system(dt, problem.implicit_shift)?, dt, solver: LinearSolver::Cg(cg) })
    }
}

#[derive(Clone, Debug, Default)]
pub struct Workspace {
    f: Vec<f64>,
    b: Vec<f64>,
    rhs: Vec<f64>,
    y: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Self { f: vec![0.0; n], b: vec![0.0; n], rhs: vec![0.0; n], y: vec![0.0; n] }
    }
}

/// `y = S b` written into `ws.y`, with `ws.b` holding `b`.
fn apply_solution_operator(problem: &ProblemDef, stepper: &Stepper, ws: &mut Workspace) -> Result<()> {
    problem.space.mass.spmv_unchecked(&ws.b, &mut ws.rhs);
    stepper.system.apply_boundary(&mut ws.rhs);
    match &stepper.solver {
        LinearSolver::Banded(chol) => {
            ws.y.copy_from_slice(&ws.rhs);
            chol.solve_in_place(&mut ws.y)?;
        }
        LinearSolver::Cg(opts) => {
            ws.y.copy_from_slice(&ws.b);
            let report = cg_solve_into(&stepper.system.matrix, &ws.rhs, &mut ws.y, *opts, None)?;
            if !report.converged {
                return Err(Error::SolverDivergence { iterations: report.iterations, residual: report.final_residual_norm });
            }
        }
    }
    Ok(())
}

/// One step of the modified scheme; `o_now`, `o_next` are the noise fields at `t_m`, `t_{m+1}`.
pub fn modified_step(
    state: &mut SchemeState,
    problem: &ProblemDef,
    stepper: &Stepper,
    o_now: &[f64],
    o_next: &[f64],
    ws: &mut Workspace,
) -> Result<()> {
    let n = state.x.len();
    check_len(n, o_now.len())?;
    check_len(n, o_next.len())?;
    if ws.f.len() != n {
        *ws = Workspace::new(n);
    }
    problem.drift.eval(&state.x, &mut ws.f);
    for i in 0..n {
        ws.b[i] = state.x[i] + stepper.dt * ws.f[i] - o_now[i];
    }
    apply_solution_operator(problem, stepper, ws)?;
    for i in 0..n {
        state.x[i] = ws.y[i] + o_next[i];
    }
    state.m += 1;
    state.t = state.m as f64 * stepper.dt;
    Ok(())
}

/// One step of the standard scheme with the noise increment field `dw`.
pub fn standard_step(
    state: &mut SchemeState,
    problem: &ProblemDef,
    stepper: &Stepper,
    dw: &[f64],
    ws: &mut Workspace,
) -> Result<()> {
    let n = state.x.len();
    check_len(n, dw.len())?;
    if ws.f.len() != n {
        *ws = Workspace::new(n);
    }
    problem.drift.eval(&state.x, &mut ws.f);
    for i in 0..n {
        ws.b[i] = state.x[i] + stepper.dt * ws.f[i] + dw[i];
    }
    apply_solution_operator(problem, stepper, ws)?;
    state.x.copy_from_slice(&ws.y);
    state.m += 1;
    state.t = state.m as f64 * stepper.dt;
    Ok(())
}

/// One scheme advanced every `ratio` fine noise steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelSpec {
    pub ratio: usize,
    pub kind: SchemeKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledOutput {
    /// Final state of each level, in the order given.
    pub finals: Vec<Vec<f64>>,
    /// Exact solution at the final time, when the problem has one.
    pub exact: Option<Vec<f64>>,
    /// `(level, step, time, field)` snapshots.
    pub snapshots: Vec<(usize, usize, f64, Vec<f64>)>,
}

/// Runs several schemes and step sizes on one shared fine noise path.
///
/// Coarse levels consume the fine convolution at their own times (exact, since the
/// per-mode recursion is exact for any step) and sums of fine Brownian increments.
pub struct CoupledRunner {
    problem: ProblemDef,
    process: NoiseProcess,
    exact_channel: Option<usize>,
    evaluator: GridEvaluator,
    fine_dt: f64,
    fine_steps: usize,
    levels: Vec<LevelSpec>,
    steppers: Vec<Option<Stepper>>,
    snapshot_every: Option<usize>,
}

impl CoupledRunner {
    pub fn new(problem: ProblemDef, fine_dt: f64, fine_steps: usize, levels: &[LevelSpec]) -> Result<Self> {
        problem.validate()?;
        if !(fine_dt > 0.0 && fine_dt.is_finite()) {
            return Err(invalid(format!("time step must be positive, got {fine_dt}")));
        }
        let (model, exact_channel) = problem.noise_channels()?;
        for l in levels {
            if l.ratio == 0 || fine_steps % l.ratio != 0 {
                return Err(invalid(format!("level ratio {} does not divide {fine_steps} fine steps", l.ratio)));
            }
            if l.kind == SchemeKind::ExactLinear {
                if problem.drift.linear_coefficient().is_none() || exact_channel.is_none() {
                    return Err(Error::NotLinear);
                }
                if problem.x0.iter().any(|&v| v != 0.0) {
                    return Err(invalid("the exact linear solution is only available from X0 = 0"));
                }
            }
        }
        let steppers = levels
            .iter()
            .map(|l| match l.kind {
                SchemeKind::ExactLinear => Ok(None),
                _ => Stepper::new(&problem, fine_dt * l.ratio as f64).map(Some),
            })
            .collect::<Result<Vec<_>>>()?;
        let evaluator = GridEvaluator::new(&problem.basis, &problem.space.xs, &problem.space.ys);
        Ok(Self {
            process: NoiseProcess::new(model, fine_dt)?,
            exact_channel,
            evaluator,
            fine_dt,
            fine_steps,
            levels: levels.to_vec(),
            steppers,
            problem,
            snapshot_every: None,
        })
    }

    /// Records the state of every level each `every` of its own steps.
    pub fn with_snapshots(mut self, every: usize) -> Self {
        self.snapshot_every = (every > 0).then_some(every);
        self
    }

    pub fn problem(&self) -> &ProblemDef {
        &self.problem
    }

    pub fn fine_dt(&self) -> f64 {
        self.fine_dt
    }

    pub fn run(&self, seed: &NoiseSeed) -> Result<CoupledOutput> {
        let n = self.problem.space.dof_count();
        let modes = self.process.model().mode_count();
        let mut noise = self.process.initial_state();
        let mut ws = Workspace::new(n);
        let mut scratch = vec![0.0; self.evaluator_scratch()];

        let mut states: Vec<SchemeState> =
            self.levels.iter().map(|l| SchemeState::initial(&self.problem, l.kind)).collect();
        let mut o_prev: Vec<Vec<f64>> = self
            .levels
            .iter()
            .map(|l| if l.kind == SchemeKind::Modified { vec![0.0; n] } else { Vec::new() })
            .collect();
        let mut dw_acc: Vec<Vec<f64>> = self
            .levels
            .iter()
            .map(|l| if l.kind == SchemeKind::Standard { vec![0.0; modes] } else { Vec::new() })
            .collect();
        let mut o_field = vec![0.0; n];
        let mut dw_field = vec![0.0; n];
        let mut snapshots = Vec::new();
        let needs_work = self.levels.iter().any(|l| l.kind != SchemeKind::ExactLinear);

        for m in 0..self.fine_steps {
            advance(&self.process, &mut noise, seed);
            if !needs_work {
                continue;
            }
            let mut o_ready = false;
            for (li, level) in self.levels.iter().enumerate() {
                match level.kind {
                    SchemeKind::Standard => {
                        dw_acc[li].iter_mut().zip(&noise.dw).for_each(|(a, d)| *a += d);
                    }
                    SchemeKind::Modified | SchemeKind::ExactLinear => {}
                }
                if (m + 1) % level.ratio != 0 {
                    continue;
                }
                let stepper = match &self.steppers[li] {
                    Some(s) => s,
                    None => continue,
                };
                match level.kind {
                    SchemeKind::Modified => {
                        if !o_ready {
                            self.evaluator.evaluate_into(noise.channel(0), &mut o_field, &mut scratch);
                            o_ready = true;
                        }
                        modified_step(&mut states[li], &self.problem, stepper, &o_prev[li], &o_field, &mut ws)?;
                        o_prev[li].copy_from_slice(&o_field);
                    }
                    SchemeKind::Standard => {
                        self.evaluator.evaluate_into(&dw_acc[li], &mut dw_field, &mut scratch);
                        standard_step(&mut states[li], &self.problem, stepper, &dw_field, &mut ws)?;
                        dw_acc[li].iter_mut().for_each(|a| *a = 0.0);
                    }
                    SchemeKind::ExactLinear => unreachable!(),
                }
                if let Some(every) = self.snapshot_every {
                    let s = &states[li];
                    if s.m % every == 0 {
                        snapshots.push((li, s.m, s.t, s.x.clone()));
                    }
                }
            }
        }

        let exact = match self.exact_channel {
            Some(c) => {
                let mut field = vec![0.0; n];
                self.evaluator.evaluate_into(noise.channel(c), &mut field, &mut scratch);
                Some(field)
            }
            None => None,
        };
        let finals = self
            .levels
            .iter()
            .zip(states)
            .map(|(l, s)| match l.kind {
                SchemeKind::ExactLinear => exact.clone().expect("checked at construction"),
                _ => s.x,
            })
            .collect();
        Ok(CoupledOutput { finals, exact, snapshots })
    }

    fn evaluator_scratch(&self) -> usize {
        self.problem.basis.n * self.problem.space.ys.len()
    }
}

/// Final state of one realization of one scheme over `n_steps` steps of size `dt`.
pub fn run_realization(
    problem: &ProblemDef,
    dt: f64,
    n_steps: usize,
    seed: &NoiseSeed,
    kind: SchemeKind,
) -> Result<SchemeState> {
    if n_steps == 0 {
        return Ok(SchemeState::initial(problem, kind));
    }
    let runner = CoupledRunner::new(problem.clone(), dt, n_steps, &[LevelSpec { ratio: 1, kind }])?;
    let out = runner.run(seed)?;
    Ok(SchemeState { x: out.finals.into_iter().next().unwrap(), m: n_steps, t: n_steps as f64 * dt, kind })
}

/// The exact solution of a linear problem at `n_steps dt` on the path selected by `seed`.
pub fn exact_linear_path(problem: &ProblemDef, dt: f64, n_steps: usize, seed: &NoiseSeed) -> Result<Vec<f64>> {
    Ok(run_realization(problem, dt, n_steps, seed, SchemeKind::ExactLinear)?.x)
}
