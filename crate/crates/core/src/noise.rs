//! Spectral Q-Wiener noise and exact per-mode simulation of the stochastic convolution.
//!
//! The noise lives on the Neumann cosine basis of the rectangle,
//! `e_{ij}(x, y) = e_i(x) e_j(y)` with `e_0 = sqrt(1/L)` and `e_i = sqrt(2/L) cos(i pi x / L)`.
//! Each retained mode carries a standard Brownian motion scaled by `sqrt(q_ij)`.
//!
//! Every time step draws, per mode, one jointly Gaussian vector
//! `(dB, I_1, ..., I_C)` where `dB` is the Brownian increment and
//! `I_c = int exp(-a_c (t_{m+1} - s)) dB(s)` is the convolution increment for decay rate
//! `a_c`. Channel `c` of the state then follows the exact recursion
//! `O_c(t_{m+1}) = exp(-a_c dt) O_c(t_m) + sqrt(q) I_c`. Because the joint law is exact,
//! channels with different rates and the Brownian path stay consistent with each other,
//! and coarser grids may subsample the fine path.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, invalid, Result};
use crate::mesh::Point;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralBasis {
    /// Modes per axis; indices run over `0..n`.
    pub n: usize,
    pub l1: f64,
    pub l2: f64,
}

impl SpectralBasis {
    pub fn new(n: usize, l1: f64, l2: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("number of spectral modes must be positive"));
        }
        if !(l1 > 0.0 && l2 > 0.0) {
            return Err(invalid("domain sides must be positive"));
        }
        Ok(Self { n, l1, l2 })
    }

    pub fn mode_count(&self) -> usize {
        self.n * self.n
    }

    /// Flat index of mode `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    pub fn mode(&self, k: usize) -> (usize, usize) {
        (k / self.n, k % self.n)
    }

    /// Eigenvalue of `-Laplacian` with Neumann conditions.
    pub fn eigenvalue(&self, i: usize, j: usize) -> f64 {
        let a = i as f64 * std::f64::consts::PI / self.l1;
        let b = j as f64 * std::f64::consts::PI / self.l2;
        a * a + b * b
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.mode_count()).map(|k| {
            let (i, j) = self.mode(k);
            self.eigenvalue(i, j)
        }).collect()
    }

    pub fn eigenfunction_1d(index: usize, len: f64, x: f64) -> f64 {
        if index == 0 {
            (1.0 / len).sqrt()
        } else {
            (2.0 / len).sqrt() * (index as f64 * std::f64::consts::PI * x / len).cos()
        }
    }

    pub fn eigenfunction(&self, i: usize, j: usize, p: Point) -> f64 {
        Self::eigenfunction_1d(i, self.l1, p[0]) * Self::eigenfunction_1d(j, self.l2, p[1])
    }
}

/// Sum of `coeffs[k] e_k(p)` at each point.
pub fn evaluate_field(basis: &SpectralBasis, coeffs: &[f64], points: &[Point]) -> Result<Vec<f64>> {
    check_len(basis.mode_count(), coeffs.len())?;
    Ok(points
        .iter()
        .map(|&p| {
            let ex: Vec<f64> = (0..basis.n).map(|i| SpectralBasis::eigenfunction_1d(i, basis.l1, p[0])).collect();
            let ey: Vec<f64> = (0..basis.n).map(|j| SpectralBasis::eigenfunction_1d(j, basis.l2, p[1])).collect();
            let mut s = 0.0;
            for i in 0..basis.n {
                let row = &coeffs[i * basis.n..(i + 1) * basis.n];
                s += ex[i] * row.iter().zip(&ey).map(|(c, e)| c * e).sum::<f64>();
            }
            s
        })
        .collect())
}

/// Separable evaluation on a tensor grid `xs x ys`; output index is `ix + iy * xs.len()`.
#[derive(Clone, Debug)]
pub struct GridEvaluator {
    n: usize,
    nx: usize,
    ny: usize,
    /// `ex[i * nx + ix]`
    ex: Vec<f64>,
    /// `ey[j * ny + iy]`
    ey: Vec<f64>,
}

impl GridEvaluator {
    pub fn new(basis: &SpectralBasis, xs: &[f64], ys: &[f64]) -> Self {
        let n = basis.n;
        let ex = (0..n).flat_map(|i| xs.iter().map(move |&x| SpectralBasis::eigenfunction_1d(i, basis.l1, x))).collect();
        let ey = (0..n).flat_map(|j| ys.iter().map(move |&y| SpectralBasis::eigenfunction_1d(j, basis.l2, y))).collect();
        Self { n, nx: xs.len(), ny: ys.len(), ex, ey }
    }

    pub fn point_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn evaluate(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n * self.n, coeffs.len())?;
        let mut out = vec![0.0; self.point_count()];
        let mut scratch = vec![0.0; self.n * self.ny];
        self.evaluate_into(coeffs, &mut out, &mut scratch);
        Ok(out)
    }

    /// `scratch` must hold `n * ny` values.
    pub fn evaluate_into(&self, coeffs: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let (n, nx, ny) = (self.n, self.nx, self.ny);
        // scratch[i * ny + iy] = sum_j c_ij e_j(y_iy)
        scratch.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let t = &mut scratch[i * ny..(i + 1) * ny];
            for j in 0..n {
                let c = coeffs[i * n + j];
                if c == 0.0 {
                    continue;
                }
                let e = &self.ey[j * ny..(j + 1) * ny];
                t.iter_mut().zip(e).for_each(|(t, e)| *t += c * e);
            }
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for iy in 0..ny {
            let row = &mut out[iy * nx..(iy + 1) * nx];
            for i in 0..n {
                let t = scratch[i * ny + iy];
                let e = &self.ex[i * nx..(i + 1) * nx];
                row.iter_mut().zip(e).for_each(|(o, e)| *o += t * e);
            }
        }
    }
}

/// Weight given to the constant mode, where `(i^2 + j^2)^(-(r + delta))` is undefined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroModeWeight {
    /// `q_00 = 1`
    #[default]
    Unit,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub r: f64,
    pub delta: f64,
    pub zero_mode: ZeroModeWeight,
    /// Multiplies every `q_ij`; zero switches the noise off.
    pub amplitude: f64,
}

impl NoiseSpec {
    pub fn new(r: f64, delta: f64) -> Result<Self> {
        let spec = Self { r, delta, zero_mode: ZeroModeWeight::Unit, amplitude: 1.0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn silent() -> Self {
        Self { r: 1.0, delta: 0.05, zero_mode: ZeroModeWeight::Unit, amplitude: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(invalid(format!("noise regularity r must be positive, got {}", self.r)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(invalid(format!("noise decay slack delta must be positive, got {}", self.delta)));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(invalid("noise amplitude must be non-negative"));
        }
        Ok(())
    }

    pub fn q(&self, i: usize, j: usize) -> f64 {
        let base = if i == 0 && j == 0 {
            match self.zero_mode {
                ZeroModeWeight::Unit => 1.0,
                ZeroModeWeight::Zero => 0.0,
            }
        } else {
            ((i * i + j * j) as f64).powf(-(self.r + self.delta))
        };
        self.amplitude * base
    }

    pub fn q_values(&self, basis: &SpectralBasis) -> Vec<f64> {
        (0..basis.mode_count()).map(|k| {
            let (i, j) = basis.mode(k);
            self.q(i, j)
        }).collect()
    }
}

/// Partial sum of `lambda^(r-1) q` over `{0..n}^2 \ (0,0)`, the trace-type quantity that must
/// stay bounded for the noise to have the requested regularity.
pub fn regularity_partial_sum(spec: &NoiseSpec, n: usize, l1: f64, l2: f64, r: f64) -> f64 {
    let basis = SpectralBasis { n, l1, l2 };
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == 0 && j == 0 {
                continue;
            }
            s += basis.eigenvalue(i, j).powf(r - 1.0) * spec.q(i, j);
        }
    }
    s
}

/// How a zero decay rate (the constant Neumann mode) is treated.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum ZeroEigenvalue {
    /// Exact Brownian limit `O' = O + sqrt(q dt) R`.
    #[default]
    BrownianLimit,
    /// Shift every rate by `epsilon` (the perturbed operator `A - epsilon I`).
    Perturb(f64),
}

/// Decay rates `diffusion * lambda_k + shift` for one convolution channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuRates {
    pub diffusion: f64,
    pub shift: f64,
    pub zero: ZeroEigenvalue,
}

impl OuRates {
    pub fn laplacian(diffusion: f64) -> Self {
        Self { diffusion, shift: 0.0, zero: ZeroEigenvalue::BrownianLimit }
    }

    pub fn rates(&self, basis: &SpectralBasis) -> Vec<f64> {
        let eps = match self.zero {
            ZeroEigenvalue::BrownianLimit => 0.0,
            ZeroEigenvalue::Perturb(e) => e,
        };
        basis.eigenvalues().iter().map(|l| self.diffusion * l + self.shift + eps).collect()
    }
}

/// Per-mode noise weights and convolution decay rates (`rates[c][k]`).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    pub q: Vec<f64>,
    pub rates: Vec<Vec<f64>>,
}

impl NoiseModel {
    pub fn new(q: Vec<f64>, rates: Vec<Vec<f64>>) -> Result<Self> {
        for r in &rates {
            check_len(q.len(), r.len())?;
            if r.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
                return Err(invalid("decay rates must be finite and non-negative"));
            }
        }
        if q.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(invalid("noise weights must be finite and non-negative"));
        }
        if rates.len() > 3 {
            return Err(invalid("at most three convolution channels are supported"));
        }
        Ok(Self { q, rates })
    }

    pub fn from_basis(basis: &SpectralBasis, spec: &NoiseSpec, channels: &[OuRates]) -> Result<Self> {
        spec.validate()?;
        Self::new(spec.q_values(basis), channels.iter().map(|c| c.rates(basis)).collect())
    }

    pub fn mode_count(&self) -> usize {
        self.q.len()
    }

    pub fn channel_count(&self) -> usize {
        self.rates.len()
    }

    pub fn is_silent(&self) -> bool {
        self.q.iter().all(|&q| q == 0.0)
    }
}

/// `int_0^dt exp(-a s) ds`, with the `a -> 0` limit `dt`.
pub fn decay_integral(a: f64, dt: f64) -> f64 {
    if a == 0.0 {
        dt
    } else {
        -(-a * dt).exp_m1() / a
    }
}

/// Variance of one convolution increment per unit `q`: `(1 - exp(-2 a dt)) / (2 a)`.
pub fn ou_increment_variance(a: f64, dt: f64) -> f64 {
    decay_integral(2.0 * a, dt)
}

/// Covariance of `(sqrt(q) dB, sqrt(q) I)` over one step for decay rate `a`.
pub fn coupled_increment_covariance(a: f64, q: f64, dt: f64) -> [[f64; 2]; 2] {
    let c = q * decay_integral(a, dt);
    [[q * dt, c], [c, q * ou_increment_variance(a, dt)]]
}

/// Lower Cholesky factor of a PSD matrix; pivots that round below zero are set to zero.
fn psd_cholesky(cov: &[[f64; 4]; 4], dim: usize) -> [[f64; 4]; 4] {
    let mut l = [[0.0; 4]; 4];
    for i in 0..dim {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = cov[i][i] - s;
                debug_assert!(d > -1e-12 * cov[i][i].abs().max(1e-300), "covariance not PSD");
                l[i][i] = d.max(0.0).sqrt();
            } else if l[j][j] > 0.0 {
                l[i][j] = (cov[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

/// Step-size dependent coefficients of a [`NoiseModel`].
#[derive(Clone, Debug)]
pub struct NoiseProcess {
    model: NoiseModel,
    dt: f64,
    /// `decay[c * modes + k] = exp(-a_ck dt)`
    decay: Vec<f64>,
    /// Per mode, lower Cholesky factor of the unit-q covariance of `(dB, I_1..I_C)`, scaled by sqrt(q).
    chol: Vec<[[f64; 4]; 4]>,
}

impl NoiseProcess {
    pub fn new(model: NoiseModel, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        let modes = model.mode_count();
        let channels = model.channel_count();
        let dim = channels + 1;
        let mut decay = Vec::with_capacity(channels * modes);
        for c in 0..channels {
            decay.extend(model.rates[c].iter().map(|a| (-a * dt).exp()));
        }
        let chol = (0..modes)
            .map(|k| {
                let rate = |c: usize| model.rates[c][k];
                let mut cov = [[0.0; 4]; 4];
                cov[0][0] = dt;
                for c in 0..channels {
                    cov[0][c + 1] = decay_integral(rate(c), dt);
                    cov[c + 1][0] = cov[0][c + 1];
                    for d in 0..channels {
                        cov[c + 1][d + 1] = decay_integral(rate(c) + rate(d), dt);
                    }
                }
                let mut l = psd_cholesky(&cov, dim);
                let s = model.q[k].sqrt();
                l.iter_mut().flatten().for_each(|v| *v *= s);
                l
            })
            .collect();
        Ok(Self { model, dt, decay, chol })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    pub fn initial_state(&self) -> NoiseState {
        NoiseState::zero(self.model.mode_count(), self.model.channel_count())
    }

    /// Advances every channel by one exact step and records the coupled Brownian increment.
    pub fn ou_step<R: Rng + ?Sized>(&self, state: &mut NoiseState, rng: &mut R) {
        let modes = self.model.mode_count();
        let channels = self.model.channel_count();
        let dim = channels + 1;
        let mut z = [0.0; 4];
        for k in 0..modes {
            for zi in z.iter_mut().take(dim) {
                *zi = rng.sample(StandardNormal);
            }
            let l = &self.chol[k];
            state.dw[k] = l[0][0] * z[0];
            for c in 0..channels {
                let row = &l[c + 1];
                let incr: f64 = (0..=c + 1).map(|j| row[j] * z[j]).sum();
                let o = &mut state.o[c * modes + k];
                *o = self.decay[c * modes + k] * *o + incr;
            }
        }
        state.step += 1;
        state.t = state.step as f64 * self.dt;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseState {
    pub t: f64,
    pub step: u64,
    /// `o[c * modes + k]`: coefficient of mode `k` in convolution channel `c`.
    pub o: Vec<f64>,
    /// Brownian increment of the last step, scaled by `sqrt(q)`.
    pub dw: Vec<f64>,
}

impl NoiseState {
    pub fn zero(modes: usize, channels: usize) -> Self {
        Self { t: 0.0, step: 0, o: vec![0.0; modes * channels], dw: vec![0.0; modes] }
    }

    pub fn modes(&self) -> usize {
        self.dw.len()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let m = self.modes();
        &self.o[c * m..(c + 1) * m]
    }

    pub fn brownian_increment(&self) -> &[f64] {
        &self.dw
    }
}

/// Counter-based stream selection: one ChaCha key per (seed, realization, stream) and one
/// ChaCha stream per time step, so any step of any path can be regenerated independently.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NoiseSeed {
    pub seed: u64,
    pub realization: u64,
    pub stream: u64,
}

impl NoiseSeed {
    pub fn new(seed: u64, realization: u64) -> Self {
        Self { seed, realization, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    pub fn rng_for_step(&self, step: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.realization.to_le_bytes());
        key[16..24].copy_from_slice(&self.stream.to_le_bytes());
        key[24..].copy_from_slice(b"spdekit\0");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(step);
        rng
    }
}

/// Advances `state` by one step using the counter-based stream for its current step index.
pub fn advance(process: &NoiseProcess, state: &mut NoiseState, seed: &NoiseSeed) {
    let mut rng = seed.rng_for_step(state.step);
    process.ou_step(state, &mut rng);
}

/// The full fine-grid path `O(t_0), ..., O(t_n)` with per-step Brownian increments.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub dt: f64,
    pub states: Vec<NoiseState>,
}

impl NoisePath {
    /// Brownian increments over coarse steps of `ratio` fine steps (sums of fine increments).
    pub fn coarse_increments(&self, ratio: usize) -> Result<Vec<Vec<f64>>> {
        let n_steps = self.states.len() - 1;
        if ratio == 0 || n_steps % ratio != 0 {
            return Err(invalid(format!("coarsening ratio {ratio} does not divide {n_steps} steps")));
        }
        Ok((0..n_steps / ratio)
            .map(|m| {
                let mut acc = vec![0.0; self.states[0].modes()];
                for s in &self.states[m * ratio + 1..=(m + 1) * ratio] {
                    acc.iter_mut().zip(&s.dw).for_each(|(a, d)| *a += d);
                }
                acc
            })
            .collect())
    }

    /// States at coarse times `t = m ratio dt` (exact subsampling of the OU recursion).
    pub fn subsample(&self, ratio: usize) -> Vec<&NoiseState> {
        self.states.iter().step_by(ratio.max(1)).collect()
    }
}

pub fn generate_path(
    spec: &NoiseSpec,
    basis: &SpectralBasis,
    channels: &[OuRates],
    dt_fine: f64,
    n_steps: usize,
    seed: NoiseSeed,
) -> Result<NoisePath> {
    if n_steps == 0 {
        return Err(invalid("a noise path needs at least one step"));
    }
    let process = NoiseProcess::new(NoiseModel::from_basis(basis, spec, channels)?, dt_fine)?;
    let mut state = process.initial_state();
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(state.clone());
    for _ in 0..n_steps {
        advance(&process, &mut state, &seed);
        states.push(state.clone());
    }
    Ok(NoisePath { dt: dt_fine, states })
}

/// Writes `step,mode_i,mode_j,O_coeff` rows for channel `channel` of a path.
pub fn write_path_csv<W: std::io::Write>(
    out: &mut W,
    basis: &SpectralBasis,
    path: &NoisePath,
    channel: usize,
) -> Result<()> {
    writeln!(out, "step,mode_i,mode_j,O_coeff")?;
    for s in &path.states {
        for (k, v) in s.channel(channel).iter().enumerate() {
            let (i, j) = basis.mode(k);
            writeln!(out, "{},{i},{j},{v:e}", s.step)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues() {
        let b = SpectralBasis::new(4, 1.0, 2.0).unwrap();
        assert_eq!(b.eigenvalue(0, 0), 0.0);
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((b.eigenvalue(1, 0) - pi2).abs() < 1e-14);
        assert!((b.eigenvalue(0, 2) - pi2).abs() < 1e-14);
        assert!(SpectralBasis::new(0, 1.0, 1.0).is_err());
    }

    #[test]
    fn field_examples() {
        let b = SpectralBasis::new(3, 1.0, 1.0).unwrap();
        let pts = [[0.0, 0.0], [0.3, 0.8], [1.0, 0.5]];
        assert_eq!(evaluate_field(&b, &[0.0; 9], &pts).unwrap(), vec![0.0; 3]);

        let mut c = vec![0.0; 9];
        c[0] = 2.5;
        let b2 = SpectralBasis::new(3, 2.0, 0.5).unwrap();
        for v in evaluate_field(&b2, &c, &pts).unwrap() {
            assert!((v - 2.5 * (0.5f64).sqrt() * 2f64.sqrt()).abs() < 1e-14);
        }

        let mut c = vec![0.0; 9];
        c[b.index(1, 0)] = 1.0;
        let v = evaluate_field(&b, &c, &pts).unwrap();
        assert!((v[0] - 2f64.sqrt()).abs() < 1e-14);
        assert!((v[1] - 2f64.sqrt() * (0.3 * std::f64::consts::PI).cos()).abs() < 1e-14);
        assert!(evaluate_field(&b, &[0.0; 4], &pts).is_err());
    }

    #[test]
    fn grid_evaluator_matches_pointwise() {
        let b = SpectralBasis::new(5, 1.0, 1.5).unwrap();
        let xs = [0.0, 0.2, 0.55, 1.0];
        let ys = [0.1, 0.75, 1.5];
        let coeffs: Vec<f64> = (0..25).map(|k| ((k * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let pts: Vec<Point> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect();
        let direct = evaluate_field(&b, &coeffs, &pts).unwrap();
        let fast = GridEvaluator::new(&b, &xs, &ys).evaluate(&coeffs).unwrap();
        for (d, f) in direct.iter().zip(&fast) {
            assert!((d - f).abs() < 1e-12);
        }
    }

    #[test]
    fn q_formula() {
        let s = NoiseSpec::new(2.0, 0.05).unwrap();
        assert_eq!(s.q(0, 0), 1.0);
        assert!((s.q(1, 1) - 2f64.powf(-2.05)).abs() < 1e-15);
        let z = NoiseSpec { zero_mode: ZeroModeWeight::Zero, ..s };
        assert_eq!(z.q(0, 0), 0.0);
        assert!(NoiseSpec::new(0.0, 0.05).is_err());
        assert!(NoiseSpec::new(1.0, 0.0).is_err());
    }

    #[test]
    fn variance_limits() {
        // (q / 2 lambda)(1 - exp(-2 lambda dt)) -> q dt
        assert_eq!(ou_increment_variance(0.0, 0.1), 0.1);
        assert!((ou_increment_variance(1e-10, 0.1) - 0.1).abs() < 1e-11);
        assert!((ou_increment_variance(1.0, 0.1) - 0.5 * (1.0 - (-0.2f64).exp())).abs() < 1e-15);
        let c = coupled_increment_covariance(1.0, 1.0, 0.1);
        assert!((c[0][1] - (1.0 - (-0.1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_keep_o_at_zero() {
        let model = NoiseModel::new(vec![0.0; 5], vec![vec![0.0, 1.0, 2.0, 3.0, 4.0]]).unwrap();
        let p = NoiseProcess::new(model, 0.1).unwrap();
        let mut s = p.initial_state();
        let seed = NoiseSeed::new(3, 0);
        for _ in 0..10 {
            advance(&p, &mut s, &seed);
        }
        assert!(s.o.iter().all(|&v| v == 0.0));
        assert!(s.dw.iter().all(|&v| v == 0.0));
        assert_eq!(s.step, 10);
    }

    #[test]
    fn zero_rate_channel_is_the_brownian_path() {
        let model = NoiseModel::new(vec![2.0], vec![vec![0.0]]).unwrap();
        let p = NoiseProcess::new(model, 0.25).unwrap();
        let mut s = p.initial_state();
        let seed = NoiseSeed::new(11, 4);
        let mut w = 0.0;
        for _ in 0..8 {
            advance(&p, &mut s, &seed);
            w += s.dw[0];
            assert!((s.o[0] - w).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(NoiseModel::new(vec![1.0], vec![vec![-1.0]]).is_err());
        assert!(NoiseModel::new(vec![1.0, 1.0], vec![vec![1.0]]).is_err());
        let m = NoiseModel::new(vec![1.0], vec![vec![1.0]]).unwrap();
        assert!(NoiseProcess::new(m, 0.0).is_err());
        let b = SpectralBasis::new(2, 1.0, 1.0).unwrap();
        let s = NoiseSpec::new(1.0, 0.05).unwrap();
        assert!(generate_path(&s, &b, &[OuRates::laplacian(1.0)], 0.1, 0, NoiseSeed::new(0, 0)).is_err());
    }

    #[test]
    fn path_dump() {
        let b = SpectralBasis::new(2, 1.0, 1.0).unwrap();
        let s = NoiseSpec::new(1.0, 0.05).unwrap();
        let path = generate_path(&s, &b, &[OuRates::laplacian(1.0)], 0.1, 2, NoiseSeed::new(0, 0)).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&mut buf, &b, &path, 0).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 4);
        assert!(text.starts_with("step,mode_i,mode_j,O_coeff\n0,0,0,0e0\n"));
    }
}
