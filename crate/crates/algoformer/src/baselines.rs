//! Reference numerical solvers for the regression tasks: gradient descent,
//! the Newton-Schulz iteration, and closed-form (ridge) least squares.
//! They double as oracles for construction verification and as comparison
//! baselines, with full iterate trajectories kept for error-vs-iteration
//! curves.

use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("alpha {alpha} outside (0, {max}] = (0, 2/|SS^T|]")]
    AlphaOutOfRange { alpha: f64, max: f64 },
    #[error("system is rank deficient at ridge 0 (pivot {pivot:.3e} at column {col})")]
    RankDeficient { pivot: f64, col: usize },
    #[error("empty grid")]
    EmptyGrid,
}

pub type Result<T> = std::result::Result<T, SolverError>;

/// One least-squares problem: design X (N x d), labels y, with S = X^T X
/// cached at construction.
#[derive(Debug, Clone)]
pub struct RegressionInstance {
    pub x: Tensor<f64>,
    pub y: Vec<f64>,
    pub s: Tensor<f64>,
}

impl RegressionInstance {
    pub fn new(x: Tensor<f64>, y: Vec<f64>) -> Self {
        assert_eq!(x.rows(), y.len(), "design rows must match label count");
        let s = x.transpose_plain().matmul_plain(&x).expect("gram matrix");
        RegressionInstance { x, y, s }
    }

    pub fn from_rows(xs: &[Vec<f64>], ys: &[f64]) -> Self {
        let n = xs.len();
        let d = xs[0].len();
        let x = Tensor::from_fn(n, d, |i, j| xs[i][j]);
        Self::new(x, ys.to_vec())
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// 1/(2N) |Xw - y|^2
    pub fn loss(&self, w: &[f64]) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for i in 0..n {
            let mut p = 0.0;
            for j in 0..self.d() {
                p += self.x.at(i, j) * w[j];
            }
            acc += (p - self.y[i]).powi(2);
        }
        acc / (2.0 * n as f64)
    }

    /// X^T y
    pub fn xty(&self) -> Vec<f64> {
        let d = self.d();
        let mut out = vec![0.0; d];
        for i in 0..self.n() {
            for j in 0..d {
                out[j] += self.x.at(i, j) * self.y[i];
            }
        }
        out
    }

    /// Largest eigenvalue of the (symmetric PSD) gram matrix, by power
    /// iteration from a deterministic start.
    pub fn lambda_max(&self) -> f64 {
        spectral_norm_sym(&self.s)
    }

    /// 2 / |S S^T|_2 = 2 / lambda_max(S)^2.
    pub fn alpha_max(&self) -> f64 {
        let l = self.lambda_max();
        2.0 / (l * l)
    }
}

/// Power iteration for the top eigenvalue of a symmetric PSD matrix.
pub fn spectral_norm_sym(s: &Tensor<f64>) -> f64 {
    let d = s.rows();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut prev = 0.0;
    for _ in 0..500 {
        let mut w = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                w[i] += s.at(i, j) * v[j];
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for x in &mut w {
            *x /= norm;
        }
        let mut lambda = 0.0;
        for i in 0..d {
            for j in 0..d {
                lambda += w[i] * s.at(i, j) * w[j];
            }
        }
        v = w;
        if (lambda - prev).abs() <= 1e-13 * lambda.abs().max(1.0) {
            return lambda;
        }
        prev = lambda;
    }
    prev
}

// ── gradient descent ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct GdTrajectory {
    /// w_0..w_K (possibly truncated on divergence)
    pub iterates: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
    pub diverged: bool,
}

impl GdTrajectory {
    pub fn final_w(&self) -> &[f64] {
        self.iterates.last().expect("at least w_0")
    }
}

/// w_{k+1} = w_k - (eta/N) X^T (X w_k - y), full trajectory recorded.
/// Divergence (loss above 10x the initial) truncates the trajectory and
/// sets the flag.
pub fn gd_solve(inst: &RegressionInstance, eta: f64, steps: usize, w0: &[f64]) -> GdTrajectory {
    assert!(eta > 0.0, "step size must be positive");
    let (n, d) = (inst.n(), inst.d());
    let mut w = w0.to_vec();
    let mut iterates = vec![w.clone()];
    let mut losses = vec![inst.loss(&w)];
    let guard = 10.0 * losses[0].max(1e-300);
    for _ in 0..steps {
        let mut resid = vec![0.0; n];
        for i in 0..n {
            let mut p = 0.0;
            for j in 0..d {
                p += inst.x.at(i, j) * w[j];
            }
            resid[i] = p - inst.y[i];
        }
        for j in 0..d {
            let mut g = 0.0;
            for i in 0..n {
                g += inst.x.at(i, j) * resid[i];
            }
            w[j] -= eta * g / n as f64;
        }
        let loss = inst.loss(&w);
        iterates.push(w.clone());
        losses.push(loss);
        if !loss.is_finite() || loss > guard {
            return GdTrajectory {
                iterates,
                losses,
                diverged: true,
            };
        }
    }
    GdTrajectory {
        iterates,
        losses,
        diverged: false,
    }
}

// ── Newton-Schulz ───────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct NewtonTrajectory {
    /// M_0..M_K
    pub ms: Vec<Tensor<f64>>,
    /// w_k = M_k X^T y
    pub iterates: Vec<Vec<f64>>,
    /// |I - M_k S|_F per step
    pub residuals: Vec<f64>,
    pub losses: Vec<f64>,
    /// set when |I - M_0 S| >= 1 (outside the guaranteed-contraction zone)
    pub contraction_warning: bool,
}

fn frob_i_minus_ms(m: &Tensor<f64>, s: &Tensor<f64>) -> f64 {
    let d = s.rows();
    let ms = m.matmul_plain(s).expect("M S");
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let v = (if i == j { 1.0 } else { 0.0 }) - ms.at(i, j);
            acc += v * v;
        }
    }
    acc.sqrt()
}

/// M_0 = alpha S; M_{k+1} = 2 M_k - M_k S M_k; w_k = M_k X^T y.
pub fn newton_solve(
    inst: &RegressionInstance,
    alpha: f64,
    steps: usize,
) -> Result<NewtonTrajectory> {
    let max = inst.alpha_max();
    // tiny slack so alpha = alpha_max computed elsewhere is not rejected
    if alpha <= 0.0 || alpha > max * (1.0 + 1e-12) {
        return Err(SolverError::AlphaOutOfRange { alpha, max });
    }
    let d = inst.d();
    let xty = inst.xty();
    let mut m = Tensor::from_fn(d, d, |i, j| alpha * inst.s.at(i, j));
    let mut ms = Vec::with_capacity(steps + 1);
    let mut iterates = Vec::with_capacity(steps + 1);
    let mut residuals = Vec::with_capacity(steps + 1);
    let mut losses = Vec::with_capacity(steps + 1);
    let w_of = |m: &Tensor<f64>| -> Vec<f64> {
        (0..d)
            .map(|i| (0..d).map(|j| m.at(i, j) * xty[j]).sum())
            .collect()
    };
    let r0 = frob_i_minus_ms(&m, &inst.s);
    // spectral radius can still be < 1 when the Frobenius norm is not;
    // warn and proceed
    let contraction_warning = r0 >= 1.0 && {
        // check the spectral bound too before warning
        let sm = spectral_i_minus_ms(&m, &inst.s);
        sm >= 1.0
    };
    ms.push(m.clone());
    let w = w_of(&m);
    losses.push(inst.loss(&w));
    iterates.push(w);
    residuals.push(r0);
    for _ in 0..steps {
        // M_{k+1} = 2 M_k - M_k S M_k
        let msm = m
            .matmul_plain(&inst.s)
            .and_then(|t| t.matmul_plain(&m))
            .expect("M S M");
        let next = Tensor::from_fn(d, d, |i, j| 2.0 * m.at(i, j) - msm.at(i, j));
        m = next;
        ms.push(m.clone());
        residuals.push(frob_i_minus_ms(&m, &inst.s));
        let w = w_of(&m);
        losses.push(inst.loss(&w));
        iterates.push(w);
    }
    Ok(NewtonTrajectory {
        ms,
        iterates,
        residuals,
        losses,
        contraction_warning,
    })
}

fn spectral_i_minus_ms(m: &Tensor<f64>, s: &Tensor<f64>) -> f64 {
    let d = s.rows();
    let ms = m.matmul_plain(s).expect("M S");
    // (I-MS) is symmetric when M is a polynomial in S; use |A^T A|^(1/2)
    let a = Tensor::from_fn(d, d, |i, j| (if i == j { 1.0 } else { 0.0 }) - ms.at(i, j));
    let ata = a.transpose_plain().matmul_plain(&a).expect("A^T A");
    spectral_norm_sym(&ata).sqrt()
}

// ── closed form ─────────────────────────────────────────────────────────

/// Cholesky factor L of a symmetric positive definite matrix.
fn cholesky(a: &Tensor<f64>) -> Result<Tensor<f64>> {
    let d = a.rows();
    let mut l = Tensor::zeros(vec![d, d]);
    for j in 0..d {
        let mut diag = a.at(j, j);
        for k in 0..j {
            diag -= l.at(j, k) * l.at(j, k);
        }
        if diag <= 1e-12 * a.at(j, j).abs().max(1.0) {
            return Err(SolverError::RankDeficient {
                pivot: diag,
                col: j,
            });
        }
        let dsq = diag.sqrt();
        l.set(j, j, dsq);
        for i in j + 1..d {
            let mut v = a.at(i, j);
            for k in 0..j {
                v -= l.at(i, k) * l.at(j, k);
            }
            l.set(i, j, v / dsq);
        }
    }
    Ok(l)
}

/// w* = (S + lambda I)^{-1} X^T y via Cholesky.
pub fn closed_form_solve(inst: &RegressionInstance, lambda: f64) -> Result<Vec<f64>> {
    let d = inst.d();
    let a = Tensor::from_fn(d, d, |i, j| {
        inst.s.at(i, j) + if i == j { lambda } else { 0.0 }
    });
    let l = cholesky(&a)?;
    let b = inst.xty();
    // forward substitution L z = b
    let mut z = vec![0.0; d];
    for i in 0..d {
        let mut v = b[i];
        for k in 0..i {
            v -= l.at(i, k) * z[k];
        }
        z[i] = v / l.at(i, i);
    }
    // back substitution L^T w = z
    let mut w = vec![0.0; d];
    for i in (0..d).rev() {
        let mut v = z[i];
        for k in i + 1..d {
            v -= l.at(k, i) * w[k];
        }
        w[i] = v / l.at(i, i);
    }
    Ok(w)
}

// ── grid search ─────────────────────────────────────────────────────────

/// The six step sizes searched for gradient descent.
pub const GD_STEP_GRID: [f64; 6] = [1.0, 0.5, 0.1, 0.05, 0.01, 0.001];

/// Fractions of alpha_max searched for the Newton initializer.
pub const NEWTON_ALPHA_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone)]
pub struct GridSearch<C> {
    /// (config, mean error) rows in grid order
    pub table: Vec<(C, f64)>,
    pub best: C,
    pub best_err: f64,
}

/// Evaluate mean final error per config over an instance set and return
/// the argmin together with the full table.
pub fn grid_search<C: Clone>(
    configs: &[C],
    mut eval_mean_err: impl FnMut(&C) -> f64,
) -> Result<GridSearch<C>> {
    if configs.is_empty() {
        return Err(SolverError::EmptyGrid);
    }
    let mut table = Vec::with_capacity(configs.len());
    let mut best_idx = 0;
    for (i, c) in configs.iter().enumerate() {
        let err = eval_mean_err(c);
        if err < table.get(best_idx).map_or(f64::INFINITY, |t: &(C, f64)| t.1) {
            best_idx = i;
        }
        table.push((c.clone(), err));
    }
    Ok(GridSearch {
        best: table[best_idx].0.clone(),
        best_err: table[best_idx].1,
        table,
    })
}

// ── instance helpers ────────────────────────────────────────────────────

/// Gaussian instance with noiseless or noisy labels from a random w.
pub fn random_instance(
    d: usize,
    n: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (RegressionInstance, Vec<f64>) {
    let w: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let f: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        ys.push(f + rng.sample::<f64, _>(StandardNormal) * sigma);
        xs.push(x);
    }
    (RegressionInstance::from_rows(&xs, &ys), w)
}

/// Instance whose gram matrix has condition number exactly `kappa`:
/// X = Q diag(s) V^T with orthonormal Q (N x d) and V (d x d), singular
/// values interpolating sqrt(spread).
pub fn well_conditioned_instance(
    d: usize,
    n: usize,
    kappa: f64,
    rng: &mut ChaCha8Rng,
) -> (RegressionInstance, Vec<f64>) {
    assert!(kappa >= 1.0 && n >= d);
    let q = orthonormal_columns(n, d, rng);
    let v = orthonormal_columns(d, d, rng);
    // singular values s_i with s_max^2 / s_min^2 = kappa, scaled so that
    // lambda values sit near those of a Gaussian design (order N)
    let smin = (n as f64 / kappa).sqrt();
    let smax = (n as f64).sqrt();
    let sv: Vec<f64> = (0..d)
        .map(|i| {
            let t = if d == 1 { 0.0 } else { i as f64 / (d - 1) as f64 };
            smin + t * (smax - smin)
        })
        .collect();
    let x = Tensor::from_fn(n, d, |i, j| {
        (0..d).map(|k| q.at(i, k) * sv[k] * v.at(j, k)).sum()
    });
    let w: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let ys: Vec<f64> = (0..n)
        .map(|i| (0..d).map(|j| x.at(i, j) * w[j]).sum())
        .collect();
    (RegressionInstance::new(x, ys), w)
}

/// Thin QR by modified Gram-Schmidt; returns the Q factor.
fn orthonormal_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut q = Tensor::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    for j in 0..cols {
        for k in 0..j {
            let dot: f64 = (0..rows).map(|i| q.at(i, j) * q.at(i, k)).sum();
            for i in 0..rows {
                let v = q.at(i, j) - dot * q.at(i, k);
                q.set(i, j, v);
            }
        }
        let norm: f64 = (0..rows).map(|i| q.at(i, j).powi(2)).sum::<f64>().sqrt();
        for i in 0..rows {
            let v = q.at(i, j) / norm;
            q.set(i, j, v);
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn rng(s: u64) -> ChaCha8Rng {
        seed::stream(s, "baselines-test")
    }

    #[test]
    fn gram_matrix_is_cached_exactly() {
        let (inst, _) = random_instance(5, 9, 0.1, &mut rng(1));
        let recomputed = inst.x.transpose_plain().matmul_plain(&inst.x).unwrap();
        assert!(inst.s.max_abs_diff(&recomputed) <= 1e-12);
    }

    #[test]
    fn gd_trivial_cases() {
        // y = 0, w0 = 0 stays at 0
        let inst = RegressionInstance::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]], &[0.0, 0.0]);
        let traj = gd_solve(&inst, 0.3, 5, &[0.0, 0.0]);
        assert!(traj.final_w().iter().all(|v| *v == 0.0));
        // 1-D: X = [1], y = [2], eta = 1 converges in one exact step
        let inst = RegressionInstance::from_rows(&[vec![1.0]], &[2.0]);
        let traj = gd_solve(&inst, 1.0, 1, &[0.0]);
        assert_eq!(traj.final_w(), &[2.0]);
    }

    #[test]
    fn gd_monotone_and_matches_closed_form() {
        let (inst, w_true) = random_instance(4, 8, 0.0, &mut rng(2));
        let eta_bound = 2.0 * inst.n() as f64 / inst.lambda_max();
        let eta = 0.5 * eta_bound;
        let traj = gd_solve(&inst, eta, 4000, &vec![0.0; 4]);
        assert!(!traj.diverged);
        for k in 1..traj.losses.len() {
            assert!(
                traj.losses[k] <= traj.losses[k - 1] + 1e-15,
                "loss must not increase at step {k}"
            );
        }
        let w_star = closed_form_solve(&inst, 0.0).unwrap();
        let err: f64 = traj
            .final_w()
            .iter()
            .zip(&w_star)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-8, "GD limit vs closed form: {err}");
        // and the closed form recovers the noiseless truth
        let err_true: f64 = w_star
            .iter()
            .zip(&w_true)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err_true < 1e-8);
    }

    #[test]
    fn gd_divergence_is_flagged_and_truncated() {
        let (inst, _) = random_instance(4, 8, 0.0, &mut rng(3));
        let eta = 4.0 * inst.n() as f64 / inst.lambda_max();
        let traj = gd_solve(&inst, eta, 500, &vec![0.0; 4]);
        assert!(traj.diverged);
        assert!(traj.iterates.len() < 501);
    }

    #[test]
    fn newton_identity_gram_converges_at_zero() {
        // S = I via orthonormal design, alpha = 1
        let q = orthonormal_columns(6, 3, &mut rng(4));
        let y = vec![1.0, -0.5, 2.0, 0.0, 0.3, 1.1];
        let inst = RegressionInstance::new(q, y);
        let traj = newton_solve(&inst, 1.0, 3).unwrap();
        assert!(traj.residuals[0] < 1e-12, "I - M_0 S = 0 when S = I");
        assert!(!traj.contraction_warning);
    }

    #[test]
    fn newton_residual_squares_each_step() {
        let (inst, _) = random_instance(5, 12, 0.0, &mut rng(5));
        let alpha = 0.75 * inst.alpha_max();
        let traj = newton_solve(&inst, alpha, 8).unwrap();
        for k in 0..8 {
            // (I - M_{k+1} S) = (I - M_k S)^2 as matrices
            let d = inst.d();
            let eye = Tensor::<f64>::eye(d);
            let rk = {
                let ms = traj.ms[k].matmul_plain(&inst.s).unwrap();
                Tensor::from_fn(d, d, |i, j| eye.at(i, j) - ms.at(i, j))
            };
            let rk1 = {
                let ms = traj.ms[k + 1].matmul_plain(&inst.s).unwrap();
                Tensor::from_fn(d, d, |i, j| eye.at(i, j) - ms.at(i, j))
            };
            let rk_sq = rk.matmul_plain(&rk).unwrap();
            let diff = rk1.max_abs_diff(&rk_sq) * (d as f64);
            assert!(diff <= 1e-10, "step {k}: identity violated by {diff}");
        }
    }

    #[test]
    fn newton_alpha_range_is_enforced() {
        let (inst, _) = random_instance(4, 9, 0.0, &mut rng(6));
        assert!(matches!(
            newton_solve(&inst, -0.1, 2),
            Err(SolverError::AlphaOutOfRange { .. })
        ));
        assert!(matches!(
            newton_solve(&inst, 2.0 * inst.alpha_max(), 2),
            Err(SolverError::AlphaOutOfRange { .. })
        ));
        for f in NEWTON_ALPHA_FRACTIONS {
            assert!(newton_solve(&inst, f * inst.alpha_max(), 2).is_ok());
        }
    }

    #[test]
    fn newton_well_conditioned_reaches_1e8_within_ten_iterations() {
        let (inst, w_true) = well_conditioned_instance(20, 40, 4.0, &mut rng(7));
        let alpha = 0.75 * inst.alpha_max();
        let traj = newton_solve(&inst, alpha, 10).unwrap();
        let err: f64 = traj
            .iterates
            .last()
            .unwrap()
            .iter()
            .zip(&w_true)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-8, "|w_10 - w*| = {err:.3e}");
    }

    #[test]
    fn closed_form_cases() {
        // orthonormal X at lambda = 0: w* = X^T y
        let q = orthonormal_columns(7, 3, &mut rng(8));
        let y = vec![0.2, -1.0, 0.7, 0.1, 0.9, -0.4, 0.0];
        let inst = RegressionInstance::new(q, y);
        let w = closed_form_solve(&inst, 0.0).unwrap();
        let xty = inst.xty();
        for (a, b) in w.iter().zip(&xty) {
            assert!((a - b).abs() < 1e-12);
        }
        // enormous ridge shrinks toward zero
        let w = closed_form_solve(&inst, 1e8).unwrap();
        let wn: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bn: f64 = xty.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(wn <= 1e-6 * bn);
    }

    #[test]
    fn closed_form_detects_rank_deficiency() {
        // duplicate column -> singular gram matrix
        let xs = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![-1.0, -1.0]];
        let inst = RegressionInstance::from_rows(&xs, &[1.0, 2.0, -1.0]);
        assert!(matches!(
            closed_form_solve(&inst, 0.0),
            Err(SolverError::RankDeficient { .. })
        ));
        assert!(closed_form_solve(&inst, 1e-3).is_ok());
    }

    #[test]
    fn grid_search_returns_argmin_and_table() {
        let out = grid_search(&GD_STEP_GRID, |eta| (eta - 0.05).abs()).unwrap();
        assert_eq!(out.best, 0.05);
        assert_eq!(out.table.len(), 6);
        let single = grid_search(&[0.3], |_| 1.0).unwrap();
        assert_eq!(single.best, 0.3);
        assert!(matches!(
            grid_search::<f64>(&[], |_| 0.0),
            Err(SolverError::EmptyGrid)
        ));
    }

    #[test]
    fn solvers_agree_pairwise_on_noiseless_instances() {
        for s in 0..3 {
            let (inst, _) = random_instance(5, 11, 0.0, &mut rng(100 + s));
            let w_cf = closed_form_solve(&inst, 0.0).unwrap();
            let eta = 0.9 * 2.0 * inst.n() as f64 / inst.lambda_max();
            let w_gd = gd_solve(&inst, eta, 20000, &vec![0.0; 5]);
            let w_nt = newton_solve(&inst, 0.5 * inst.alpha_max(), 30).unwrap();
            let d_gd: f64 = w_gd
                .final_w()
                .iter()
                .zip(&w_cf)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let d_nt: f64 = w_nt
                .iterates
                .last()
                .unwrap()
                .iter()
                .zip(&w_cf)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(d_gd < 1e-6, "gd vs closed form: {d_gd}");
            assert!(d_nt < 1e-6, "newton vs closed form: {d_nt}");
        }
    }
}
