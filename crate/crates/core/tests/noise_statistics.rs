use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spdekit::noise::{
    coupled_increment_covariance, evaluate_field, generate_path, ou_increment_variance, regularity_partial_sum,
    NoiseModel, NoiseProcess, NoiseSeed, NoiseSpec, NoiseState, OuRates, SpectralBasis,
};

struct Moments {
    n: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl Moments {
    fn new() -> Self {
        Self { n: 0.0, sx: 0.0, sy: 0.0, sxx: 0.0, syy: 0.0, sxy: 0.0 }
    }

    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.sx += x;
        self.sy += y;
        self.sxx += x * x;
        self.syy += y * y;
        self.sxy += x * y;
    }

    fn var_x(&self) -> f64 {
        (self.sxx - self.sx * self.sx / self.n) / (self.n - 1.0)
    }

    fn var_y(&self) -> f64 {
        (self.syy - self.sy * self.sy / self.n) / (self.n - 1.0)
    }

    fn cov(&self) -> f64 {
        (self.sxy - self.sx * self.sy / self.n) / (self.n - 1.0)
    }

    fn corr(&self) -> f64 {
        self.cov() / (self.var_x() * self.var_y()).sqrt()
    }
}

fn single_mode(q: f64, rate: f64, dt: f64) -> NoiseProcess {
    NoiseProcess::new(NoiseModel::new(vec![q], vec![vec![rate]]).unwrap(), dt).unwrap()
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value.
fn ks_p_value(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    let p: f64 = (1..200).map(|k| {
        let k = k as f64;
        2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
    }).sum();
    p.clamp(0.0, 1.0)
}

#[test]
fn one_step_moments_match_closed_form() {
    let process = single_mode(1.0, 1.0, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut m = Moments::new();
    for _ in 0..1_000_000 {
        let mut s = process.initial_state();
        process.ou_step(&mut s, &mut rng);
        m.push(s.dw[0], s.o[0]);
    }
    let var_o = 0.5 * (1.0 - (-0.2f64).exp());
    let cov = 1.0 - (-0.1f64).exp();
    assert!((var_o - 0.0906).abs() < 1e-4);
    assert!((cov - 0.09516).abs() < 1e-5);
    assert!((m.var_y() / var_o - 1.0).abs() < 0.01, "Var I = {}", m.var_y());
    assert!((m.cov() / cov - 1.0).abs() < 0.02, "Cov = {}", m.cov());
    assert!((m.var_x() / 0.1 - 1.0).abs() < 0.01, "Var dB = {}", m.var_x());
}

#[test]
fn closed_form_covariance_matches_quadrature() {
    // E[dB I] = int_0^dt exp(-a (dt - s)) ds, E[I^2] = int_0^dt exp(-2 a (dt - s)) ds
    let (a, dt, n) = (1.0f64, 0.1f64, 100_000);
    let h = dt / n as f64;
    let (mut c, mut v) = (0.0, 0.0);
    for k in 0..n {
        let s = (k as f64 + 0.5) * h;
        c += (-a * (dt - s)).exp() * h;
        v += (-2.0 * a * (dt - s)).exp() * h;
    }
    let cov = coupled_increment_covariance(a, 1.0, dt);
    assert!((cov[0][1] - c).abs() < 1e-10);
    assert!((cov[1][1] - v).abs() < 1e-10);
    assert_eq!(cov[0][0], dt);
}

#[test]
fn vanishing_rate_couples_increments_perfectly() {
    let cov = coupled_increment_covariance(1e-9, 2.0, 0.1);
    let corr = cov[0][1] / (cov[0][0] * cov[1][1]).sqrt();
    assert!((corr - 1.0).abs() < 1e-8);
    assert!((ou_increment_variance(1e-12, 0.3) - 0.3).abs() < 1e-12);
}

#[test]
fn double_step_matches_two_single_steps_in_law() {
    let (rate, dt, o0) = (3.0, 0.05, 0.4);
    let coarse = single_mode(1.0, rate, 2.0 * dt);
    let fine = single_mode(1.0, rate, dt);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let start = |p: &NoiseProcess| {
        let mut s = p.initial_state();
        s.o[0] = o0;
        s
    };
    let a: Vec<f64> = (0..100_000)
        .map(|_| {
            let mut s = start(&coarse);
            coarse.ou_step(&mut s, &mut rng);
            s.o[0]
        })
        .collect();
    let b: Vec<f64> = (0..100_000)
        .map(|_| {
            let mut s = start(&fine);
            fine.ou_step(&mut s, &mut rng);
            fine.ou_step(&mut s, &mut rng);
            s.o[0]
        })
        .collect();
    let p = ks_p_value(a, b);
    assert!(p > 0.01, "KS p-value {p}");
}

#[test]
fn coarse_brownian_increments_are_sums_of_fine_ones() {
    let basis = SpectralBasis::new(4, 1.0, 2.0).unwrap();
    let spec = NoiseSpec::new(1.0, 0.05).unwrap();
    let path = generate_path(&spec, &basis, &[OuRates::laplacian(1.0)], 0.01, 8, NoiseSeed::new(5, 2)).unwrap();
    let coarse = path.coarse_increments(2).unwrap();
    assert_eq!(coarse.len(), 4);
    for (m, c) in coarse.iter().enumerate() {
        for k in 0..basis.mode_count() {
            assert_eq!(c[k], path.states[2 * m + 1].dw[k] + path.states[2 * m + 2].dw[k]);
        }
    }
    let sub = path.subsample(4);
    assert_eq!(sub.len(), 3);
    assert_eq!(sub[2].step, 8);
    assert!(path.coarse_increments(3).is_err());
}

#[test]
fn variance_at_unit_time_matches_transient_formula() {
    let basis = SpectralBasis::new(5, 1.0, 1.0).unwrap();
    let spec = NoiseSpec::new(1.0, 0.05).unwrap();
    let model = NoiseModel::from_basis(&basis, &spec, &[OuRates::laplacian(0.05)]).unwrap();
    let (q, rates) = (model.q.clone(), model.rates[0].clone());
    let process = NoiseProcess::new(model, 0.125).unwrap();
    let samples = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut sum_sq = vec![0.0; q.len()];
    let mut sum_4 = vec![0.0; q.len()];
    for _ in 0..samples {
        let mut s = process.initial_state();
        for _ in 0..8 {
            process.ou_step(&mut s, &mut rng);
        }
        for k in 0..q.len() {
            sum_sq[k] += s.o[k] * s.o[k];
            sum_4[k] += s.o[k].powi(4);
        }
    }
    for k in 0..q.len() {
        let expected = q[k] * ou_increment_variance(rates[k], 1.0);
        let n = samples as f64;
        let var = sum_sq[k] / n;
        let se = ((sum_4[k] / n - var * var) / n).sqrt();
        assert!((var - expected).abs() < 3.0 * se + 1e-15, "mode {k}: {var} vs {expected} (se {se})");
    }
}

#[test]
fn stationary_variance_is_reached() {
    let (q, rate) = (0.5, std::f64::consts::PI.powi(2));
    let process = single_mode(q, rate, 0.5 / rate);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let samples = 50_000;
    let (mut s2, mut s4) = (0.0, 0.0);
    for _ in 0..samples {
        let mut s = process.initial_state();
        for _ in 0..20 {
            process.ou_step(&mut s, &mut rng);
        }
        s2 += s.o[0] * s.o[0];
        s4 += s.o[0].powi(4);
    }
    let n = samples as f64;
    let var = s2 / n;
    let se = ((s4 / n - var * var) / n).sqrt();
    let stationary = q / (2.0 * rate);
    assert!((var - stationary).abs() < 3.0 * se, "{var} vs {stationary} (se {se})");
}

#[test]
fn modes_are_uncorrelated() {
    let basis = SpectralBasis::new(3, 1.0, 1.0).unwrap();
    let spec = NoiseSpec::new(1.0, 0.05).unwrap();
    let process = NoiseProcess::new(NoiseModel::from_basis(&basis, &spec, &[OuRates::laplacian(1.0)]).unwrap(), 0.1).unwrap();
    let samples = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pairs = [(0usize, 1usize), (1, 3), (2, 4), (4, 8), (0, 8)];
    let mut moments: Vec<Moments> = pairs.iter().map(|_| Moments::new()).collect();
    for _ in 0..samples {
        let mut s = process.initial_state();
        process.ou_step(&mut s, &mut rng);
        process.ou_step(&mut s, &mut rng);
        for (m, &(a, b)) in moments.iter_mut().zip(&pairs) {
            m.push(s.o[a], s.o[b]);
        }
    }
    let se = 1.0 / (samples as f64).sqrt();
    for (m, pair) in moments.iter().zip(&pairs) {
        assert!(m.corr().abs() <= 3.0 * se, "modes {pair:?}: correlation {}", m.corr());
    }
}

#[test]
fn truncation_is_idempotent_on_midpoint_grid() {
    let (n, l1, l2) = (6, 2.0, 1.5);
    let basis = SpectralBasis::new(n, l1, l2).unwrap();
    let coeffs: Vec<f64> = (0..basis.mode_count()).map(|k| ((k * 37 % 11) as f64 - 5.0) / 3.0).collect();
    // a midpoint grid with at least n points per axis makes the cosines discretely orthonormal
    let (mx, my) = (9usize, 7usize);
    let xs: Vec<f64> = (0..mx).map(|i| (i as f64 + 0.5) * l1 / mx as f64).collect();
    let ys: Vec<f64> = (0..my).map(|j| (j as f64 + 0.5) * l2 / my as f64).collect();
    let points: Vec<[f64; 2]> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect();
    let field = evaluate_field(&basis, &coeffs, &points).unwrap();
    let w = l1 * l2 / (mx * my) as f64;
    for k in 0..basis.mode_count() {
        let (i, j) = basis.mode(k);
        let c: f64 = points.iter().zip(&field).map(|(p, f)| w * f * basis.eigenfunction(i, j, *p)).sum();
        assert!((c - coeffs[k]).abs() < 1e-12, "mode ({i},{j}): {c} vs {}", coeffs[k]);
    }
}

#[test]
fn regularity_partial_sums_converge() {
    for r in [1.0, 2.0] {
        // with a generous decay slack the sums settle quickly
        let spec = NoiseSpec::new(r, 0.5).unwrap();
        let s64 = regularity_partial_sum(&spec, 64, 1.0, 1.0, r);
        let s128 = regularity_partial_sum(&spec, 128, 1.0, 1.0, r);
        assert!(s128 / s64 - 1.0 < 0.01, "r={r}: {s64} -> {s128}");

        // with the default slack the sum still converges, but slowly: each doubling adds less
        let spec = NoiseSpec::new(r, 0.05).unwrap();
        let sums: Vec<f64> = [32, 64, 128, 256].iter().map(|&n| regularity_partial_sum(&spec, n, 1.0, 1.0, r)).collect();
        let incr: Vec<f64> = sums.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(incr.iter().all(|&d| d > 0.0));
        assert!(incr.windows(2).all(|w| w[1] < w[0]), "{incr:?}");
    }
}

#[test]
fn paths_are_reproducible_and_step_addressable() {
    let basis = SpectralBasis::new(5, 1.0, 1.0).unwrap();
    let spec = NoiseSpec::new(2.0, 0.05).unwrap();
    let rates = [OuRates::laplacian(1.0), OuRates { shift: 0.5, ..OuRates::laplacian(1.0) }];
    let seed = NoiseSeed::new(2024, 17);
    let a = generate_path(&spec, &basis, &rates, 1.0 / 64.0, 64, seed).unwrap();
    let b = generate_path(&spec, &basis, &rates, 1.0 / 64.0, 64, seed).unwrap();
    assert_eq!(a, b);
    let c = generate_path(&spec, &basis, &rates, 1.0 / 64.0, 64, NoiseSeed::new(2024, 18)).unwrap();
    assert_ne!(a.states[1].o, c.states[1].o);
    let d = generate_path(&spec, &basis, &rates, 1.0 / 64.0, 64, seed.with_stream(1)).unwrap();
    assert_ne!(a.states[1].o, d.states[1].o);

    // step 40 regenerated from the stored state at step 39 alone
    let process = NoiseProcess::new(NoiseModel::from_basis(&basis, &spec, &rates).unwrap(), 1.0 / 64.0).unwrap();
    let mut s: NoiseState = a.states[39].clone();
    let mut rng = seed.rng_for_step(39);
    process.ou_step(&mut s, &mut rng);
    assert_eq!(s, a.states[40]);
}
