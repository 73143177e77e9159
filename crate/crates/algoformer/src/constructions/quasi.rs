//! Quasi-orthogonal positional codes: unit vectors of dimension
//! O(log N) whose pairwise inner products stay below 1 - eps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuasiError {
    #[error(
        "margin {want} unreachable at dimension {dim} for {n} vectors after {retries} retries \
         (best achieved {best:.4}); increase the dimension"
    )]
    MarginUnreachable {
        n: usize,
        dim: usize,
        want: f64,
        best: f64,
        retries: usize,
    },
    #[error("eps must lie in (0,1), got {0}")]
    BadEps(f64),
}

#[derive(Debug, Clone)]
pub struct QuasiOrthogonal {
    pub vectors: Vec<Vec<f64>>,
    /// Conservative achieved margin: 1 - max_{i != j} |<p_i, p_j>|.
    pub margin: f64,
    pub dim: usize,
}

impl QuasiOrthogonal {
    pub fn get(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

fn unit_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn worst_pair(vectors: &[Vec<f64>]) -> (f64, usize, usize) {
    let mut worst = (f64::NEG_INFINITY, 0, 0);
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            if dot.abs() > worst.0 {
                worst = (dot.abs(), i, j);
            }
        }
    }
    worst
}

/// Exact orthonormal basis for n <= dim (margin 1).
pub fn orthonormal(n: usize, dim: usize) -> QuasiOrthogonal {
    assert!(n <= dim, "orthonormal set needs n <= dim");
    let vectors = (0..n)
        .map(|i| {
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            v
        })
        .collect();
    QuasiOrthogonal {
        vectors,
        margin: 1.0,
        dim,
    }
}

/// Unit-norm vectors satisfying `<p_i, p_i> > <p_i, p_j> + eps` for all
/// i != j, found by resampling the worse vector of the worst pair until
/// the margin holds. For n <= dim an exact basis is returned directly.
pub fn quasi_orthogonal(
    n: usize,
    dim: usize,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<QuasiOrthogonal, QuasiError> {
    if !(0.0 < eps && eps < 1.0) {
        return Err(QuasiError::BadEps(eps));
    }
    if n <= dim {
        return Ok(orthonormal(n, dim));
    }
    let max_retries = 20_000;
    let mut vectors: Vec<Vec<f64>> = (0..n).map(|_| unit_gaussian(dim, rng)).collect();
    let mut best = f64::NEG_INFINITY;
    for retry in 0..max_retries {
        let (max_abs_dot, _i, j) = worst_pair(&vectors);
        let margin = 1.0 - max_abs_dot;
        best = best.max(margin);
        if margin >= eps {
            return Ok(QuasiOrthogonal {
                vectors,
                margin,
                dim,
            });
        }
        let _ = retry;
        vectors[j] = unit_gaussian(dim, rng);
    }
    Err(QuasiError::MarginUnreachable {
        n,
        dim,
        want: eps,
        best,
        retries: max_retries,
    })
}
