//! Binary kernel SVM trained by SMO on a precomputed kernel matrix.
//!
//! Labels are `+1.0` (pre-treatment) and `-1.0` (post-treatment). The solver
//! is the dual of the soft-margin problem in the usual form
//! `min ½αᵀQα − eᵀα, 0 ≤ α ≤ C, yᵀα = 0` with `Q_ij = y_i y_j K_ij`, working on
//! the maximal violating pair each step. That choice is symmetric in the two
//! classes, so flipping every label flips every decision value.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training data contains only one class")]
    SingleClassTraining,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {0} is not +1 or -1")]
    InvalidLabel(f64),
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("non-finite feature value in row {0}")]
    NonFinite(usize),
    #[error("cost must be positive, got {0}")]
    InvalidCost(f64),
    #[error("no training rows")]
    Empty,
}

/// Costs searched by the grid, ascending.
pub const COSTS: [f64; 9] = [0.0001, 0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0];
pub const POLY_DEGREE: i32 = 3;
pub const KKT_TOLERANCE: f64 = 1e-3;
const TAU: f64 = 1e-12;

/// Kernel families in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Polynomial,
    Rbf,
}

impl Kernel {
    pub const ALL: [Kernel; 3] = [Kernel::Linear, Kernel::Polynomial, Kernel::Rbf];
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Linear => "linear",
            Kernel::Polynomial => "polynomial",
            Kernel::Rbf => "rbf",
        })
    }
}

impl FromStr for Kernel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Kernel::Linear),
            "polynomial" | "poly" => Ok(Kernel::Polynomial),
            "rbf" => Ok(Kernel::Rbf),
            other => Err(format!("unknown kernel `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub cost: f64,
    pub kernel: Kernel,
}

impl SvmConfig {
    pub fn new(cost: f64, kernel: Kernel) -> Result<Self, SvmError> {
        if cost > 0.0 && cost.is_finite() {
            Ok(Self { cost, kernel })
        } else {
            Err(SvmError::InvalidCost(cost))
        }
    }

    /// All 27 cells, ordered by cost then kernel (which is also the
    /// tie-break preference).
    pub fn grid() -> Vec<SvmConfig> {
        COSTS
            .iter()
            .flat_map(|&cost| Kernel::ALL.map(|kernel| SvmConfig { cost, kernel }))
            .collect()
    }
}

impl fmt::Display for SvmConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} C={}", self.kernel, self.cost)
    }
}

/// A kernel with its data-dependent parameters fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelFn {
    pub kernel: Kernel,
    pub gamma: f64,
    pub coef0: f64,
    pub degree: i32,
}

impl KernelFn {
    /// Gamma is `1/d`.
    pub fn for_dim(kernel: Kernel, dim: usize) -> Self {
        Self {
            kernel,
            gamma: 1.0 / dim.max(1) as f64,
            coef0: 0.0,
            degree: POLY_DEGREE,
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kernel {
            Kernel::Linear => dot(a, b),
            Kernel::Polynomial => (self.gamma * dot(a, b) + self.coef0).powi(self.degree),
            Kernel::Rbf => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-self.gamma * d2).exp()
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Kernel matrix of a training set, reusable across costs.
#[derive(Debug, Clone)]
pub struct Gram {
    pub kernel: KernelFn,
    n: usize,
    k: Vec<f64>,
}

impl Gram {
    pub fn new<R: AsRef<[f64]>>(x: &[R], kernel: Kernel) -> Result<Self, SvmError> {
        let dim = validate_rows(x)?;
        let kf = KernelFn::for_dim(kernel, dim);
        let n = x.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = kf.eval(x[i].as_ref(), x[j].as_ref());
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        Ok(Self { kernel: kf, n, k })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.n + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.k[i * self.n..(i + 1) * self.n]
    }
}

fn validate_rows<R: AsRef<[f64]>>(x: &[R]) -> Result<usize, SvmError> {
    let first = x.first().ok_or(SvmError::Empty)?;
    let dim = first.as_ref().len();
    for (i, r) in x.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != dim {
            return Err(SvmError::DimensionMismatch { expected: dim, got: r.len() });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(SvmError::NonFinite(i));
        }
    }
    Ok(dim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub config: SvmConfig,
    pub kernel: KernelFn,
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i y_i` for each support vector.
    pub dual_coefficients: Vec<f64>,
    pub bias: f64,
    /// Training-set indices of the support vectors.
    pub support_indices: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64, SvmError> {
        if x.len() != self.dim() {
            return Err(SvmError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.dual_coefficients)
            .map(|(sv, c)| c * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias)
    }

    /// `+1.0` when the decision value is ≥ 0.
    pub fn predict(&self, x: &[f64]) -> Result<f64, SvmError> {
        Ok(sign(self.decision(x)?))
    }
}

pub fn sign(decision: f64) -> f64 {
    if decision >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn check_labels(n: usize, y: &[f64]) -> Result<(), SvmError> {
    if y.len() != n {
        return Err(SvmError::LabelCount { rows: n, labels: y.len() });
    }
    if let Some(&bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(SvmError::InvalidLabel(bad));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(SvmError::SingleClassTraining);
    }
    Ok(())
}

pub fn train<R: AsRef<[f64]>>(x: &[R], y: &[f64], config: SvmConfig) -> Result<SvmModel, SvmError> {
    let gram = Gram::new(x, config.kernel)?;
    train_with_gram(x, y, config.cost, &gram)
}

/// Trains on a precomputed kernel matrix of `x`.
pub fn train_with_gram<R: AsRef<[f64]>>(x: &[R], y: &[f64], cost: f64, gram: &Gram) -> Result<SvmModel, SvmError> {
    let config = SvmConfig::new(cost, gram.kernel.kernel)?;
    let n = x.len();
    if n != gram.len() {
        return Err(SvmError::LabelCount { rows: gram.len(), labels: n });
    }
    check_labels(n, y)?;
    let c = cost;

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let in_low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);

    let stall_limit = 10 * n;
    let hard_limit = 10_000 * n.max(100);
    let mut best_gap = f64::INFINITY;
    let mut stalled = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < hard_limit {
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        let gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap < KKT_TOLERANCE {
            converged = true;
            break;
        }
        if gap < best_gap {
            best_gap = gap;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= stall_limit {
                break;
            }
        }
        iterations += 1;

        let (ki, kj) = (gram.row(i), gram.row(j));
        let qij = y[i] * y[j] * ki[j];
        let (qii, qjj) = (ki[i], kj[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    // bias from free vectors, or the middle of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut free_sum) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };

    let support_indices: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    Ok(SvmModel {
        config,
        kernel: gram.kernel,
        support_vectors: support_indices.iter().map(|&t| x[t].as_ref().to_vec()).collect(),
        dual_coefficients: support_indices.iter().map(|&t| alpha[t] * y[t]).collect(),
        bias: -rho,
        support_indices,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn xor() -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![-1.0, -1.0, 1.0, 1.0],
        )
    }

    fn accuracy(m: &SvmModel, x: &[Vec<f64>], y: &[f64]) -> f64 {
        x.iter().zip(y).filter(|(r, &l)| m.predict(r).unwrap() == l).count() as f64 / y.len() as f64
    }

    fn random_data(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let x = y
            .iter()
            .map(|&l| (0..d).map(|_| rng.random_range(-1.0..1.0) + 0.3 * l).collect())
            .collect();
        (x, y)
    }

    fn alphas(m: &SvmModel, y: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; y.len()];
        for (&i, c) in m.support_indices.iter().zip(&m.dual_coefficients) {
            a[i] = c * y[i];
        }
        a
    }

    #[test]
    fn separable_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let l = if i % 2 == 0 { 1.0 } else { -1.0 };
            x.push(vec![2.0 * l + rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0)]);
            y.push(l);
        }
        let m = train(&x, &y, SvmConfig::new(1.0, Kernel::Linear).unwrap()).unwrap();
        assert!(m.converged);
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    /// Best accuracy of any line `w·x ≥ t` on the points, by sweeping
    /// directions and thresholds between projected points.
    fn best_linear_accuracy(x: &[Vec<f64>], y: &[f64]) -> f64 {
        let mut best: f64 = 0.0;
        for step in 0..3600 {
            let th = step as f64 * std::f64::consts::PI / 1800.0;
            let w = [th.cos(), th.sin()];
            let mut proj: Vec<f64> = x.iter().map(|p| w[0] * p[0] + w[1] * p[1]).collect();
            let scores = proj.clone();
            proj.sort_by(f64::total_cmp);
            let mut cuts = vec![proj[0] - 1.0, proj[proj.len() - 1] + 1.0];
            cuts.extend(proj.windows(2).map(|p| (p[0] + p[1]) / 2.0));
            for t in cuts {
                let ok = scores.iter().zip(y).filter(|(s, l)| (**s >= t) == (**l > 0.0)).count();
                best = best.max(ok as f64 / y.len() as f64);
            }
        }
        best
    }

    #[test]
    fn xor_needs_a_nonlinear_kernel() {
        let (x, y) = xor();
        let oracle = best_linear_accuracy(&x, &y);
        assert_eq!(oracle, 0.75);
        let rbf = train(&x, &y, SvmConfig::new(1.0, Kernel::Rbf).unwrap()).unwrap();
        assert_eq!(accuracy(&rbf, &x, &y), 1.0);
        let lin = train(&x, &y, SvmConfig::new(1.0, Kernel::Linear).unwrap()).unwrap();
        assert!(accuracy(&lin, &x, &y) <= oracle);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert_eq!(
            train(&x, &[1.0, 1.0], SvmConfig::new(1.0, Kernel::Linear).unwrap()),
            Err(SvmError::SingleClassTraining)
        );
        assert_eq!(
            train(&x, &[1.0, 0.0], SvmConfig::new(1.0, Kernel::Linear).unwrap()),
            Err(SvmError::InvalidLabel(0.0))
        );
        assert!(SvmConfig::new(0.0, Kernel::Linear).is_err());
    }

    #[test]
    fn free_support_vectors_sit_on_the_margin() {
        let (x, y) = random_data(5, 60, 3);
        for kernel in Kernel::ALL {
            let m = train(&x, &y, SvmConfig::new(1.0, kernel).unwrap()).unwrap();
            assert!(m.converged, "{kernel}");
            for (sv, c) in m.support_vectors.iter().zip(&m.dual_coefficients) {
                if c.abs() < 1.0 - 1e-9 {
                    let d = m.decision(sv).unwrap();
                    assert!((d.abs() - 1.0).abs() < 1e-3, "{kernel}: {d}");
                }
            }
        }
    }

    #[test]
    fn dual_constraints_across_the_grid() {
        let (x, y) = random_data(9, 50, 4);
        let grid = SvmConfig::grid();
        assert_eq!(grid.len(), 27);
        for kernel in Kernel::ALL {
            let gram = Gram::new(&x, kernel).unwrap();
            for cfg in grid.iter().filter(|c| c.kernel == kernel) {
                let m = train_with_gram(&x, &y, cfg.cost, &gram).unwrap();
                let a = alphas(&m, &y);
                assert!(a.iter().all(|&v| (0.0..=cfg.cost).contains(&v)), "{cfg}");
                let s: f64 = a.iter().zip(&y).map(|(a, y)| a * y).sum();
                assert!(s.abs() < 1e-6, "{cfg}: {s}");
                assert_eq!(m, train(&x, &y, *cfg).unwrap());
            }
        }
    }

    #[test]
    fn rbf_with_large_gamma_memorizes() {
        // distinct points on a 0.5 grid with arbitrary labels
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 6) as f64 * 0.5, (i / 6) as f64 * 0.5]).collect();
        let mut y: Vec<f64> = (0..30).map(|i| if i < 15 { 1.0 } else { -1.0 }).collect();
        for i in (1..30).rev() {
            y.swap(i, rng.random_range(0..=i));
        }
        // gamma = 1/d = 0.5, so scaling inputs by √200 gives gamma 100
        let s = 200f64.sqrt();
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v * s).collect()).collect();
        let gram = Gram::new(&scaled, Kernel::Rbf).unwrap();
        let off = (0..30)
            .flat_map(|i| (0..30).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| gram.get(i, j))
            .fold(0.0, f64::max);
        assert!(off < 1e-9, "{off}");
        let m = train_with_gram(&scaled, &y, 1.0, &gram).unwrap();
        assert_eq!(accuracy(&m, &scaled, &y), 1.0);
    }

    #[test]
    fn predict_matches_sign_of_decision() {
        let (x, y) = random_data(17, 40, 2);
        let m = train(&x, &y, SvmConfig::new(0.5, Kernel::Polynomial).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let d = m.decision(&p).unwrap();
            assert_eq!(m.predict(&p).unwrap(), if d >= 0.0 { 1.0 } else { -1.0 });
        }
        assert_eq!(sign(0.0), 1.0);
        assert!(matches!(m.decision(&[1.0]), Err(SvmError::DimensionMismatch { .. })));
    }

    #[test]
    fn model_json_round_trip() {
        let (x, y) = random_data(21, 20, 3);
        let m = train(&x, &y, SvmConfig::new(0.1, Kernel::Rbf).unwrap()).unwrap();
        let back: SvmModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn label_flip_negates_decisions(seed in 0u64..1000, ci in 0usize..9, ki in 0usize..3) {
            let (x, y) = random_data(seed, 24, 3);
            let cfg = SvmConfig::new(COSTS[ci], Kernel::ALL[ki]).unwrap();
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            let a = train(&x, &y, cfg).unwrap();
            let b = train(&x, &neg, cfg).unwrap();
            for p in &x {
                prop_assert!((a.decision(p).unwrap() + b.decision(p).unwrap()).abs() < 1e-6);
            }
        }
    }
}
