//! Weighted robust PCA: `D = L + E + N` with a low-rank background `L`, a
//! sparse defect layer `E` penalized by `lambda * |W ⊙ E|_1`, and Gaussian
//! noise `N` penalized by `beta/2 * |N|_F^2`, solved by a fixed-penalty
//! alternating-direction loop in scaled dual form.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{write_atomic, GrayImage};
use crate::weights::WeightMatrix;
use crate::MeshType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowRankMode {
    /// Singular value thresholding.
    #[default]
    Nuclear,
    /// Top `tau` singular values pass unshrunk; the rest get the generalized
    /// soft-threshold for the `x^p` penalty.
    SchattenPTruncated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub beta: f64,
    pub rho: f64,
    pub lowrank_mode: LowRankMode,
    pub p: f64,
    pub tau: usize,
    pub maxstep: usize,
    pub epsilon: f64,
    /// Gray levels per unit intensity. `beta` is calibrated for 8-bit data,
    /// so on `[0, 1]` images the effective noise weight is
    /// `beta * intensity_scale`; this keeps the minimizer identical to
    /// solving on 0..255 data and rescaling.
    pub intensity_scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::square()
    }
}

impl SolverConfig {
    pub fn square() -> Self {
        Self {
            lambda: 0.11,
            beta: 0.003,
            rho: 0.8,
            lowrank_mode: LowRankMode::Nuclear,
            p: 0.75,
            tau: 30,
            maxstep: 10,
            epsilon: 1e-4,
            intensity_scale: 255.0,
        }
    }

    pub fn circular() -> Self {
        Self {
            lambda: 0.06,
            beta: 0.004,
            ..Self::square()
        }
    }

    pub fn for_mesh(mesh: MeshType) -> Self {
        match mesh {
            MeshType::Square => Self::square(),
            MeshType::Circular => Self::circular(),
        }
    }

    pub fn beta_eff(&self) -> f64 {
        self.beta * self.intensity_scale
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("rho", self.rho),
            ("epsilon", self.epsilon),
            ("intensity_scale", self.intensity_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("{v} must be finite and > 0")));
            }
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::invalid("p", format!("{} not in (0, 1]", self.p)));
        }
        if self.maxstep == 0 {
            return Err(Error::invalid("maxstep", "must be >= 1"));
        }
        Ok(())
    }

    /// Threshold handed to the low-rank proximal step.
    pub fn lowrank_threshold(&self) -> f64 {
        match self.lowrank_mode {
            LowRankMode::Nuclear => 1.0 / self.rho,
            LowRankMode::SchattenPTruncated => self.lambda / self.rho,
        }
    }
}

/// Minimizer of `0.5 * (x - sigma)^2 + t * x^p` over `x >= 0`, for `sigma >= 0`.
pub fn generalized_soft_threshold(sigma: f64, t: f64, p: f64) -> f64 {
    if t <= 0.0 {
        return sigma.max(0.0);
    }
    if p >= 1.0 {
        return (sigma - t).max(0.0);
    }
    let base = 2.0 * t * (1.0 - p);
    let critical = base.powf(1.0 / (2.0 - p)) + t * p * base.powf((p - 1.0) / (2.0 - p));
    if sigma <= critical {
        return 0.0;
    }
    let mut x = sigma;
    for _ in 0..100 {
        let next = sigma - t * p * x.powf(p - 1.0);
        if (next - x).abs() <= 1e-15 * sigma.max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    let f = |x: f64| 0.5 * (x - sigma).powi(2) + t * x.powf(p);
    if x > 0.0 && f(x) < f(0.0) {
        x
    } else {
        0.0
    }
}

fn shrink_singular_values(sv: &mut [f64], threshold: f64, mode: LowRankMode, p: f64, tau: usize) {
    // nalgebra does not promise sorted singular values
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    for (rank, &i) in order.iter().enumerate() {
        sv[i] = match mode {
            LowRankMode::Nuclear => (sv[i] - threshold).max(0.0),
            LowRankMode::SchattenPTruncated if rank < tau => sv[i],
            LowRankMode::SchattenPTruncated => generalized_soft_threshold(sv[i], threshold, p),
        };
    }
}

fn ensure_finite(m: &DMatrix<f64>, stage: &'static str, iteration: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage, iteration })
    }
}

/// Returns the shrunk matrix and its (shrunk) singular values.
fn lowrank_prox_sv(
    m: &DMatrix<f64>,
    threshold: f64,
    mode: LowRankMode,
    p: f64,
    tau: usize,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::SvdFailure);
    }
    let (r, c) = m.shape();
    let svd = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]).thin_svd();
    let sigma: Vec<f64> = svd.s_diagonal().iter().copied().collect();
    let mut shrunk = sigma.clone();
    shrink_singular_values(&mut shrunk, threshold, mode, p, tau);

    let keep: Vec<usize> = (0..sigma.len()).filter(|&i| shrunk[i] > 0.0).collect();
    let (u, v) = (svd.u(), svd.v());
    let us = faer::Mat::<f64>::from_fn(r, keep.len(), |i, j| u.read(i, keep[j]) * shrunk[keep[j]]);
    let vk = faer::Mat::<f64>::from_fn(c, keep.len(), |i, j| v.read(i, keep[j]));
    let prod = &us * vk.transpose();
    let out = DMatrix::from_fn(r, c, |i, j| prod.read(i, j));
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::SvdFailure);
    }
    Ok((out, shrunk))
}

pub fn lowrank_prox(m: &DMatrix<f64>, threshold: f64, mode: LowRankMode, p: f64, tau: usize) -> Result<DMatrix<f64>> {
    if !(threshold > 0.0) {
        return Err(Error::invalid("threshold", "must be > 0"));
    }
    lowrank_prox_sv(m, threshold, mode, p, tau).map(|(out, _)| out)
}

#[inline]
pub fn soft_threshold(x: f64, eps: f64) -> f64 {
    x.signum() * (x.abs() - eps).max(0.0)
}

/// Elementwise `sgn(X) * max(|X| - lambda * W / mu, 0)`.
pub fn sparse_prox(x: &GrayImage, w: &WeightMatrix, lambda: f64, mu: f64) -> Result<GrayImage> {
    x.ensure_same_dims(w.dims())?;
    if !(mu > 0.0) {
        return Err(Error::invalid("mu", "must be > 0"));
    }
    let data = x
        .data()
        .iter()
        .zip(w.data())
        .map(|(&v, &wi)| soft_threshold(v, lambda * wi / mu))
        .collect();
    GrayImage::new(x.height(), x.width(), data)
}

/// `rho / (2 beta + rho) * R`.
pub fn noise_update(r: &GrayImage, beta: f64, rho: f64) -> GrayImage {
    let s = rho / (2.0 * beta + rho);
    r.map(|v| s * v)
}

fn to_matrix(img: &GrayImage) -> DMatrix<f64> {
    DMatrix::from_row_slice(img.height(), img.width(), img.data())
}

fn to_image(m: &DMatrix<f64>) -> GrayImage {
    let (h, w) = m.shape();
    GrayImage::from_fn(h, w, |y, x| m[(y, x)])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// `max |D - L - E - N|` after the iteration.
    pub residual: f64,
    pub objective: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxStep,
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub l: GrayImage,
    pub e: GrayImage,
    pub n: GrayImage,
    pub u: GrayImage,
    pub trace: Vec<TraceEntry>,
    pub termination: Termination,
}

impl Decomposition {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn final_residual(&self) -> f64 {
        self.trace.last().map_or(0.0, |t| t.residual)
    }
}

fn weighted_l1(e: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    e.iter().zip(w.iter()).map(|(a, b)| (a * b).abs()).sum()
}

fn lowrank_penalty(sv: &[f64], cfg: &SolverConfig) -> f64 {
    match cfg.lowrank_mode {
        LowRankMode::Nuclear => sv.iter().sum(),
        LowRankMode::SchattenPTruncated => {
            let mut sorted = sv.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            cfg.lambda * sorted.iter().skip(cfg.tau).map(|s| s.powf(cfg.p)).sum::<f64>()
        }
    }
}

/// Value of the model objective for a decomposition (diagnostic only).
pub fn objective(decomp: &Decomposition, w: &WeightMatrix, cfg: &SolverConfig) -> Result<f64> {
    decomp.l.ensure_same_dims(w.dims())?;
    let l = to_matrix(&decomp.l);
    let sv: Vec<f64> = if l.iter().all(|&v| v == 0.0) {
        Vec::new()
    } else {
        l.try_svd(false, false, f64::EPSILON, 0)
            .ok_or(Error::SvdFailure)?
            .singular_values
            .iter()
            .copied()
            .collect()
    };
    let e = to_matrix(&decomp.e);
    let n = to_matrix(&decomp.n);
    Ok(lowrank_penalty(&sv, cfg) + cfg.lambda * weighted_l1(&e, &to_matrix(w.as_image())) + 0.5 * cfg.beta_eff() * n.norm_squared())
}

pub fn solve(d: &GrayImage, w: &WeightMatrix, cfg: &SolverConfig) -> Result<Decomposition> {
    cfg.validate()?;
    d.ensure_same_dims(w.dims())?;
    let dm = to_matrix(d);
    let wm = to_matrix(w.as_image());
    let (h, wd) = d.dims();
    let zeros = || DMatrix::<f64>::zeros(h, wd);
    let (mut l, mut e, mut n, mut u) = (zeros(), zeros(), zeros(), zeros());
    let rho = cfg.rho;
    let beta = cfg.beta_eff();
    let eps_map = wm.map(|wi| cfg.lambda * wi / rho);
    let noise_scale = rho / (2.0 * beta + rho);
    let threshold = cfg.lowrank_threshold();

    let mut trace = Vec::with_capacity(cfg.maxstep);
    let mut termination = Termination::MaxStep;
    for k in 1..=cfg.maxstep {
        let (new_l, sv) = match lowrank_prox_sv(&(&dm - &e - &n + &u), threshold, cfg.lowrank_mode, cfg.p, cfg.tau) {
            Ok(v) => v,
            Err(Error::SvdFailure) => return Err(Error::NonFinite { stage: "lowrank", iteration: k }),
            Err(err) => return Err(err),
        };
        l = new_l;
        ensure_finite(&l, "lowrank", k)?;

        e = (&dm - &l - &n + &u).zip_map(&eps_map, soft_threshold);
        ensure_finite(&e, "sparse", k)?;

        n = (&dm - &l - &e + &u) * noise_scale;
        ensure_finite(&n, "noise", k)?;

        let r = &dm - &l - &e - &n;
        u += &r;
        ensure_finite(&u, "dual", k)?;

        let residual = r.amax();
        let objective = lowrank_penalty(&sv, cfg) + cfg.lambda * weighted_l1(&e, &wm) + 0.5 * beta * n.norm_squared();
        log::debug!("iteration {k}: residual {residual:.3e}, objective {objective:.6}");
        trace.push(TraceEntry {
            iteration: k,
            residual,
            objective,
        });
        if residual < cfg.epsilon {
            termination = Termination::Converged;
            break;
        }
    }
    Ok(Decomposition {
        l: to_image(&l),
        e: to_image(&e),
        n: to_image(&n),
        u: to_image(&u),
        trace,
        termination,
    })
}

pub fn trace_csv(trace: &[TraceEntry]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for t in trace {
        wtr.serialize(t)?;
    }
    wtr.into_inner().map_err(|e| Error::Config(e.to_string()))
}

pub fn write_trace(trace: &[TraceEntry], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &trace_csv(trace)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
        let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Dense scan over [0, hi] followed by a fine local scan.
    fn scan_min(f: impl Fn(f64) -> f64, hi: f64) -> f64 {
        let mut best = (0.0, f(0.0));
        let n = 200_000;
        for i in 0..=n {
            let x = hi * i as f64 / n as f64;
            let v = f(x);
            if v < best.1 {
                best = (x, v);
            }
        }
        let step = hi / n as f64;
        let (lo, mut b) = ((best.0 - step).max(0.0), best);
        for i in 0..=20_000 {
            let x = lo + 2.0 * step * i as f64 / 20_000.0;
            let v = f(x);
            if v < b.1 {
                b = (x, v);
            }
        }
        b.0
    }

    #[test]
    fn nuclear_prox_on_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 0.2]));
        let out = lowrank_prox(&m, 0.5, LowRankMode::Nuclear, 0.75, 0).unwrap();
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.5, 0.5, 0.0]));
        assert!((out - expected).amax() < 1e-12);
    }

    #[test]
    fn full_shrinkage_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(5, 7, |_, _| rng.gen_range(-1.0..1.0));
        let smax = singular_values(&m)[0];
        let out = lowrank_prox(&m, smax, LowRankMode::Nuclear, 1.0, 0).unwrap();
        assert!(out.amax() < 1e-12);
    }

    #[test]
    fn schatten_prox_matches_scalar_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let (t, p, tau) = (0.3, 0.75, 2);
        let before = singular_values(&m);
        let after = singular_values(&lowrank_prox(&m, t, LowRankMode::SchattenPTruncated, p, tau).unwrap());
        assert_abs_diff_eq!(before[0], after[0], epsilon = 1e-9);
        assert_abs_diff_eq!(before[1], after[1], epsilon = 1e-9);
        let mut expected: Vec<f64> = before[2..]
            .iter()
            .map(|&s| scan_min(|x| 0.5 * (x - s).powi(2) + t * x.powf(p), s))
            .collect();
        expected.extend_from_slice(&before[..2]);
        expected.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in after.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn gst_scalar_cases() {
        assert_eq!(generalized_soft_threshold(0.0, 0.5, 0.5), 0.0);
        assert_abs_diff_eq!(generalized_soft_threshold(2.0, 0.5, 1.0), 1.5);
        for &(s, t, p) in &[(1.0, 0.2, 0.5), (0.6, 0.3, 0.75), (3.0, 1.0, 0.3), (0.45, 0.2, 0.9)] {
            let x = generalized_soft_threshold(s, t, p);
            let oracle = scan_min(|x| 0.5 * (x - s).powi(2) + t * x.powf(p), s);
            assert!((x - oracle).abs() < 1e-6, "sigma={s} t={t} p={p}: {x} vs {oracle}");
        }
    }

    #[test]
    fn sparse_prox_cases() {
        let x = GrayImage::new(1, 3, vec![1.2, -0.3, -2.0]).unwrap();
        let out = sparse_prox(&x, &WeightMatrix::uniform(1, 3), 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(out.data()[0], 0.7, epsilon = 1e-12);
        assert_eq!(out.data()[1], 0.0);
        assert_abs_diff_eq!(out.data()[2], -1.5, epsilon = 1e-12);
        assert!(sparse_prox(&x, &WeightMatrix::uniform(3, 1), 0.5, 1.0).is_err());
    }

    #[test]
    fn tiny_weight_passes_through() {
        let x = GrayImage::new(1, 2, vec![0.3, 0.3]).unwrap();
        let w = WeightMatrix::from_image(GrayImage::new(1, 2, vec![1e-300, 1.0]).unwrap()).unwrap();
        let out = sparse_prox(&x, &w, 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(out.data()[0], 0.3, epsilon = 1e-12);
        assert_eq!(out.data()[1], 0.0);
    }

    #[test]
    fn sparse_prox_matches_scalar_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = GrayImage::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
        let w = WeightMatrix::from_image(GrayImage::from_fn(8, 8, |_, _| rng.gen_range(0.05..1.0))).unwrap();
        let (lambda, mu) = (0.4, 0.8);
        let out = sparse_prox(&x, &w, lambda, mu).unwrap();
        for i in 0..64 {
            let (xv, eps) = (x.data()[i], lambda * w.data()[i] / mu);
            let mag = scan_min(|e| 0.5 * (e - xv.abs()).powi(2) + eps * e, xv.abs());
            assert!((out.data()[i] - xv.signum() * mag).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_update_cases() {
        let r = GrayImage::new(1, 2, vec![1.0, -2.0]).unwrap();
        assert_eq!(noise_update(&r, 0.0, 0.8), r);
        let n = noise_update(&r, 0.003, 0.8);
        assert_abs_diff_eq!(n.data()[0], 0.8 / 0.806, epsilon = 1e-15);
        assert_abs_diff_eq!(0.8 / 0.806, 0.992556, epsilon = 1e-6);
        assert!(noise_update(&GrayImage::zeros(2, 2), 0.5, 0.8).data().iter().all(|&v| v == 0.0));
    }

    fn rank_one(h: usize, w: usize) -> GrayImage {
        GrayImage::from_fn(h, w, |y, x| (0.3 + 0.5 * (y as f64 / h as f64)) * (0.4 + 0.6 * ((x * 7 % w) as f64 / w as f64)))
    }

    #[test]
    fn zero_input_is_a_fixed_point() {
        let d = GrayImage::zeros(6, 6);
        let out = solve(&d, &WeightMatrix::uniform(6, 6), &SolverConfig::default()).unwrap();
        assert_eq!(out.iterations(), 1);
        assert_eq!(out.termination, Termination::Converged);
        for m in [&out.l, &out.e, &out.n, &out.u] {
            assert!(m.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rank_one_goes_to_background() {
        let d = rank_one(32, 32);
        let cfg = SolverConfig {
            lambda: 10.0,
            maxstep: 50,
            ..SolverConfig::default()
        };
        let out = solve(&d, &WeightMatrix::uniform(32, 32), &cfg).unwrap();
        assert!(out.e.data().iter().all(|v| v.abs() < 1e-3));
        assert_eq!(out.termination, Termination::Converged);
        assert!(out.final_residual() < cfg.epsilon);
        let diff = out.l.data().iter().zip(d.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 0.05, "{diff}");
    }

    #[test]
    fn spike_lands_in_sparse_part() {
        let mut d = rank_one(64, 64);
        d.set(20, 37, d.get(20, 37) + 0.5);
        let out = solve(&d, &WeightMatrix::uniform(64, 64), &SolverConfig::default()).unwrap();
        assert!(out.e.get(20, 37).abs() >= 0.25, "{}", out.e.get(20, 37));
        let elsewhere = (0..64 * 64)
            .filter(|&i| i != 20 * 64 + 37)
            .map(|i| out.e.data()[i].abs())
            .fold(0.0, f64::max);
        assert!(elsewhere < 0.05, "{elsewhere}");
        assert!(out.iterations() <= 10);
    }

    #[test]
    fn trace_and_objective() {
        let mut d = rank_one(16, 16);
        d.set(3, 3, 0.9);
        let w = WeightMatrix::uniform(16, 16);
        let cfg = SolverConfig::default();
        let out = solve(&d, &w, &cfg).unwrap();
        assert_eq!(out.trace.len(), out.iterations());
        for (i, t) in out.trace.iter().enumerate() {
            assert_eq!(t.iteration, i + 1);
        }
        let recomputed = objective(&out, &w, &cfg).unwrap();
        assert!((recomputed - out.trace.last().unwrap().objective).abs() < 1e-8 * recomputed.max(1.0));

        // term-by-term oracle
        let sv: f64 = singular_values(&to_matrix(&out.l)).iter().sum();
        let l1: f64 = out.e.data().iter().map(|v| v.abs()).sum();
        let n2: f64 = out.n.data().iter().map(|v| v * v).sum();
        let naive = sv + cfg.lambda * l1 + 0.5 * cfg.beta * cfg.intensity_scale * n2;
        assert!((recomputed - naive).abs() < 1e-9 * naive.max(1.0));

        let csv = String::from_utf8(trace_csv(&out.trace).unwrap()).unwrap();
        assert!(csv.starts_with("iteration,residual,objective\n"));
        assert_eq!(csv.lines().count(), out.trace.len() + 1);
    }

    #[test]
    fn objective_small_cases() {
        let zero = Decomposition {
            l: GrayImage::zeros(2, 2),
            e: GrayImage::zeros(2, 2),
            n: GrayImage::zeros(2, 2),
            u: GrayImage::zeros(2, 2),
            trace: Vec::new(),
            termination: Termination::Converged,
        };
        let w = WeightMatrix::uniform(2, 2);
        assert_eq!(objective(&zero, &w, &SolverConfig::default()).unwrap(), 0.0);
        let diag = Decomposition {
            l: GrayImage::new(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap(),
            ..zero
        };
        assert_abs_diff_eq!(objective(&diag, &w, &SolverConfig::default()).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig { lambda: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { p: 1.5, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { maxstep: 0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig::circular().validate().is_ok());
        let d = GrayImage::zeros(3, 3);
        assert!(matches!(
            solve(&d, &WeightMatrix::uniform(3, 4), &SolverConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn arb_matrix() -> impl Strategy<Value = GrayImage> {
        (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            proptest::collection::vec(-2.0f64..2.0, h * w).prop_map(move |d| GrayImage::new(h, w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn dual_update_identity(img in (4usize..10).prop_flat_map(|n| proptest::collection::vec(0.0f64..1.0, n * n).prop_map(move |d| GrayImage::new(n, n, d).unwrap())), steps in 1usize..4) {
            let w = WeightMatrix::uniform(img.height(), img.width());
            let cfg = SolverConfig { maxstep: steps, epsilon: 1e-300, ..Default::default() };
            let prev = solve(&img, &w, &cfg).unwrap();
            let next = solve(&img, &w, &SolverConfig { maxstep: steps + 1, ..cfg }).unwrap();
            for i in 0..img.len() {
                let r = img.data()[i] - next.l.data()[i] - next.e.data()[i] - next.n.data()[i];
                let du = next.u.data()[i] - prev.u.data()[i];
                prop_assert!((du - r).abs() <= 1e-12 * (1.0 + prev.u.data()[i].abs()));
            }
        }

        #[test]
        fn noise_update_is_linear(r in arb_matrix(), a in -3.0f64..3.0, beta in 0.0f64..1.0) {
            let lhs = noise_update(&r.map(|v| a * v), beta, 0.8);
            let rhs = noise_update(&r, beta, 0.8).map(|v| a * v);
            for (x, y) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn lower_weight_never_shrinks_more(x in -2.0f64..2.0, w1 in 0.01f64..1.0, w2 in 0.01f64..1.0) {
            let (lo, hi) = if w1 < w2 { (w1, w2) } else { (w2, w1) };
            let img = GrayImage::new(1, 1, vec![x]).unwrap();
            let at = |wv: f64| sparse_prox(&img, &WeightMatrix::from_image(GrayImage::filled(1, 1, wv)).unwrap(), 0.3, 0.8).unwrap().data()[0].abs();
            prop_assert!(at(lo) >= at(hi));
        }

        #[test]
        fn nuclear_singular_values_shrink_exactly(m in arb_matrix(), t in 0.01f64..1.0) {
            let mat = to_matrix(&m);
            let before = singular_values(&mat);
            let after = singular_values(&lowrank_prox(&mat, t, LowRankMode::Nuclear, 1.0, 0).unwrap());
            for (b, a) in before.iter().zip(&after) {
                prop_assert!((a - (b - t).max(0.0)).abs() < 1e-9);
            }
        }

        #[test]
        fn solver_halts(img in arb_matrix(), maxstep in 1usize..6) {
            let w = WeightMatrix::uniform(img.height(), img.width());
            let out = solve(&img, &w, &SolverConfig { maxstep, ..Default::default() }).unwrap();
            prop_assert!(out.iterations() <= maxstep);
            prop_assert!(out.termination == Termination::Converged || out.iterations() == maxstep);
        }
    }
}
