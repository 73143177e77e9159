//! Named row bands inside construction token vectors.
//!
//! The appendix prompt matrices are stacked blocks; these layouts pin the
//! informal pictures down to explicit disjoint row ranges. The width of a
//! construction model is whatever its band budget adds up to, independent
//! of any trained model's width.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Band {
    pub start: usize,
    pub len: usize,
}

impl Band {
    pub fn at(&self, i: usize) -> usize {
        debug_assert!(i < self.len);
        self.start + i
    }

    pub fn rows(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

struct BandAlloc(usize);

impl BandAlloc {
    fn take(&mut self, len: usize) -> Band {
        let b = Band {
            start: self.0,
            len,
        };
        self.0 += len;
        b
    }

    fn row(&mut self) -> usize {
        self.take(1).start
    }
}

/// Layout for the encoder gradient-descent constructions (the GD loop
/// layer alone, and the full representation model around it). Tokens are
/// `x_1, y_1, ..., x_N, y_N, x_test, 0` — the trailing all-zero token
/// hosts the score pin.
#[derive(Debug, Clone)]
pub struct GdLayout {
    pub d: usize,
    pub d_y: usize,
    /// feature / representation slot
    pub feat: Band,
    pub label: Band,
    /// features scaled by 1/N (keys of the gradient head)
    pub scaled: Band,
    /// running residual A_k x - y (A_k x_test on the query token)
    pub resid: Band,
    /// attention write area, zero between layers
    pub scratch: Band,
    /// 1/N carried per sample token (pre-layer product input)
    pub one_over_n: usize,
    /// quasi-orthogonal positional code, shared within each (x_i, y_i) pair
    pub pos: Band,
    pub ind_x: usize,
    pub ind_y: usize,
    pub ind_test: usize,
    pub ind_trail: usize,
    pub width: usize,
}

pub fn gd_layout(d: usize, d_y: usize, pos_dim: usize) -> GdLayout {
    let mut a = BandAlloc(0);
    let feat = a.take(d);
    let label = a.take(d_y);
    let scaled = a.take(d);
    let resid = a.take(d_y);
    let scratch = a.take(d_y);
    let one_over_n = a.row();
    let pos = a.take(pos_dim);
    let ind_x = a.row();
    let ind_y = a.row();
    let ind_test = a.row();
    let ind_trail = a.row();
    GdLayout {
        d,
        d_y,
        feat,
        label,
        scaled,
        resid,
        scratch,
        one_over_n,
        pos,
        ind_x,
        ind_y,
        ind_test,
        ind_trail,
        width: a.0,
    }
}

impl GdLayout {
    pub fn n_tokens(&self, n: usize) -> usize {
        2 * n + 2
    }

    /// Prompt in loop-ready form: features already pushed through any
    /// representation, residual band seeded with `a0 x - y`.
    pub fn build_prompt(
        &self,
        xs: &[Vec<f64>],
        ys: &[Vec<f64>],
        x_test: &[f64],
        a0: &Tensor<f64>,
    ) -> Tensor<f64> {
        let n = xs.len();
        assert_eq!(ys.len(), n);
        let cols = self.n_tokens(n);
        let mut p = Tensor::zeros(vec![self.width, cols]);
        let apply_a0 = |x: &[f64]| -> Vec<f64> {
            (0..self.d_y)
                .map(|r| (0..self.d).map(|c| a0.at(r, c) * x[c]).sum())
                .collect()
        };
        for i in 0..n {
            let (cx, cy) = (2 * i, 2 * i + 1);
            for r in 0..self.d {
                p.set(self.feat.at(r), cx, xs[i][r]);
                p.set(self.scaled.at(r), cx, xs[i][r] / n as f64);
            }
            for r in 0..self.d_y {
                p.set(self.label.at(r), cy, ys[i][r]);
            }
            let a0x = apply_a0(&xs[i]);
            for r in 0..self.d_y {
                p.set(self.resid.at(r), cx, a0x[r] - ys[i][r]);
            }
            p.set(self.one_over_n, cx, 1.0 / n as f64);
            p.set(self.one_over_n, cy, 1.0 / n as f64);
            p.set(self.ind_x, cx, 1.0);
            p.set(self.ind_y, cy, 1.0);
        }
        let (ct, cz) = (2 * n, 2 * n + 1);
        for r in 0..self.d {
            p.set(self.feat.at(r), ct, x_test[r]);
        }
        let a0t = apply_a0(x_test);
        for r in 0..self.d_y {
            p.set(self.resid.at(r), ct, a0t[r]);
        }
        p.set(self.ind_x, ct, 1.0);
        p.set(self.ind_y, cz, 1.0);
        p.set(self.ind_test, ct, 1.0);
        p.set(self.ind_trail, cz, 1.0);
        p
    }

    /// Write the pair-shared positional codes into an existing prompt.
    pub fn write_positionals(&self, p: &mut Tensor<f64>, codes: &[Vec<f64>]) {
        let cols = p.cols();
        let n = (cols - 2) / 2;
        assert!(codes.len() >= n + 1, "need N+1 positional codes");
        for i in 0..n {
            for r in 0..self.pos.len {
                p.set(self.pos.at(r), 2 * i, codes[i][r]);
                p.set(self.pos.at(r), 2 * i + 1, codes[i][r]);
            }
        }
        for r in 0..self.pos.len {
            p.set(self.pos.at(r), 2 * n, codes[n][r]);
            p.set(self.pos.at(r), 2 * n + 1, codes[n][r]);
        }
    }

    /// Read the residual band (A_k x_i - y_i at sample i, A_k x_test at
    /// the query) out of a state.
    pub fn read_resid(&self, state: &Tensor<f64>, token: usize) -> Vec<f64> {
        (0..self.d_y).map(|r| state.at(self.resid.at(r), token)).collect()
    }
}

/// Layout for the Newton blocks: tokens `x_1, y_1, ..., x_N, y_N, x_test, 0`
/// with scalar labels, an M_k x band and the indicator rows of the
/// appendix prompt (ind_x excludes the test token here).
#[derive(Debug, Clone)]
pub struct NewtonLayout {
    pub d: usize,
    pub feat: Band,
    /// features restricted to the sample tokens (zero at the query);
    /// value source of the pre layer, which must not absorb x_test into S
    pub feat_s: Band,
    pub label: usize,
    pub mx: Band,
    pub scratch: Band,
    pub pos: Band,
    pub ind_x: usize,
    pub ind_y: usize,
    pub ind_test: usize,
    pub ind_trail: usize,
    pub width: usize,
}

pub fn newton_layout(d: usize, pos_dim: usize) -> NewtonLayout {
    let mut a = BandAlloc(0);
    let feat = a.take(d);
    let feat_s = a.take(d);
    let label = a.row();
    let mx = a.take(d);
    let scratch = a.take(d);
    let pos = a.take(pos_dim);
    let ind_x = a.row();
    let ind_y = a.row();
    let ind_test = a.row();
    let ind_trail = a.row();
    NewtonLayout {
        d,
        feat,
        feat_s,
        label,
        mx,
        scratch,
        pos,
        ind_x,
        ind_y,
        ind_test,
        ind_trail,
        width: a.0,
    }
}

impl NewtonLayout {
    pub fn n_tokens(&self, n: usize) -> usize {
        2 * n + 2
    }

    pub fn build_prompt(&self, xs: &[Vec<f64>], ys: &[f64], x_test: &[f64]) -> Tensor<f64> {
        let n = xs.len();
        let mut p = Tensor::zeros(vec![self.width, self.n_tokens(n)]);
        for i in 0..n {
            let (cx, cy) = (2 * i, 2 * i + 1);
            for r in 0..self.d {
                p.set(self.feat.at(r), cx, xs[i][r]);
                p.set(self.feat_s.at(r), cx, xs[i][r]);
            }
            p.set(self.label, cy, ys[i]);
            p.set(self.ind_x, cx, 1.0);
            p.set(self.ind_y, cy, 1.0);
        }
        let (ct, cz) = (2 * n, 2 * n + 1);
        for r in 0..self.d {
            p.set(self.feat.at(r), ct, x_test[r]);
        }
        p.set(self.ind_test, ct, 1.0);
        p.set(self.ind_trail, cz, 1.0);
        // the query and trailing tokens carry no ind_x/ind_y; the +1 query
        // row of the score pin is synthesized from all four indicators
        p
    }

    pub fn write_positionals(&self, p: &mut Tensor<f64>, codes: &[Vec<f64>]) {
        let cols = p.cols();
        let n = (cols - 2) / 2;
        for i in 0..n {
            for r in 0..self.pos.len {
                p.set(self.pos.at(r), 2 * i, codes[i][r]);
                p.set(self.pos.at(r), 2 * i + 1, codes[i][r]);
            }
        }
        for r in 0..self.pos.len {
            p.set(self.pos.at(r), 2 * n, codes[n][r]);
            p.set(self.pos.at(r), 2 * n + 1, codes[n][r]);
        }
    }

    pub fn read_mx(&self, state: &Tensor<f64>, token: usize) -> Vec<f64> {
        (0..self.d).map(|r| state.at(self.mx.at(r), token)).collect()
    }
}

/// Layout for the q-lag copy construction: one token per sequence element,
/// with the current positional code, q lagged codes, q copy bands and a
/// 1-based integer index row.
#[derive(Debug, Clone)]
pub struct CopyLayout {
    pub d: usize,
    pub q: usize,
    pub feat: Band,
    pub copies: Vec<Band>,
    pub pos_now: Band,
    pub pos_lag: Vec<Band>,
    pub index_row: usize,
    pub width: usize,
}

pub fn copy_layout(d: usize, q: usize, pos_dim: usize) -> CopyLayout {
    let mut a = BandAlloc(0);
    let feat = a.take(d);
    let copies = (0..q).map(|_| a.take(d)).collect();
    let pos_now = a.take(pos_dim);
    let pos_lag = (0..q).map(|_| a.take(pos_dim)).collect();
    let index_row = a.row();
    CopyLayout {
        d,
        q,
        feat,
        copies,
        pos_now,
        pos_lag,
        index_row,
        width: a.0,
    }
}

impl CopyLayout {
    /// Tokens t = 1..=N; `codes[i]` encodes sequence index `i + 1 - q`
    /// (codes for non-positive indices exist only as stale queries).
    pub fn build_prompt(&self, seq: &[Vec<f64>], codes: &[Vec<f64>]) -> Tensor<f64> {
        let n = seq.len();
        assert!(codes.len() >= n + self.q, "need q extra codes below index 1");
        let code_of = |idx: isize| -> &Vec<f64> {
            // sequence index idx in 1-q ..= n maps to codes[idx + q - 1]
            &codes[(idx + self.q as isize - 1) as usize]
        };
        let mut p = Tensor::zeros(vec![self.width, n]);
        for t in 1..=n {
            let col = t - 1;
            for r in 0..self.d {
                p.set(self.feat.at(r), col, seq[col][r]);
            }
            for r in 0..self.pos_now.len {
                p.set(self.pos_now.at(r), col, code_of(t as isize)[r]);
            }
            for lag in 1..=self.q {
                let code = code_of(t as isize - lag as isize);
                for r in 0..self.pos_now.len {
                    p.set(self.pos_lag[lag - 1].at(r), col, code[r]);
                }
            }
            p.set(self.index_row, col, t as f64);
        }
        p
    }

    pub fn read_copy(&self, state: &Tensor<f64>, lag: usize, token_col: usize) -> Vec<f64> {
        (0..self.d)
            .map(|r| state.at(self.copies[lag - 1].at(r), token_col))
            .collect()
    }
}

/// Layout for the causal decoder gradient-descent layer: tokens
/// `x_1, y_1, ..., x_N, y_N`; every y-token carries a shifted copy of its
/// own x, every x-token carries its running weight and prefix scale.
#[derive(Debug, Clone)]
pub struct DecoderLayout {
    pub d: usize,
    pub feat: Band,
    pub label: usize,
    /// x_i stored on the y_i token (keys/values of both heads)
    pub shifted: Band,
    /// per-token weight w^i_k on x tokens
    pub weight: Band,
    /// 1/(i-1) on the token of x_i (0 for i = 1)
    pub scale_row: usize,
    pub scratch: Band,
    pub ind_x: usize,
    pub ind_y: usize,
    pub ind_tok1: usize,
    pub width: usize,
}

pub fn decoder_layout(d: usize) -> DecoderLayout {
    let mut a = BandAlloc(0);
    let feat = a.take(d);
    let label = a.row();
    let shifted = a.take(d);
    let weight = a.take(d);
    let scale_row = a.row();
    let scratch = a.take(d);
    let ind_x = a.row();
    let ind_y = a.row();
    let ind_tok1 = a.row();
    DecoderLayout {
        d,
        feat,
        label,
        shifted,
        weight,
        scale_row,
        scratch,
        ind_x,
        ind_y,
        ind_tok1,
        width: a.0,
    }
}

impl DecoderLayout {
    pub fn n_tokens(&self, n: usize) -> usize {
        2 * n
    }

    pub fn build_prompt(&self, xs: &[Vec<f64>], ys: &[f64]) -> Tensor<f64> {
        let n = xs.len();
        let mut p = Tensor::zeros(vec![self.width, self.n_tokens(n)]);
        for i in 0..n {
            let (cx, cy) = (2 * i, 2 * i + 1);
            for r in 0..self.d {
                p.set(self.feat.at(r), cx, xs[i][r]);
                p.set(self.shifted.at(r), cy, xs[i][r]);
            }
            p.set(self.label, cy, ys[i]);
            // sample index i+1 sees i prior pairs
            if i > 0 {
                p.set(self.scale_row, cx, 1.0 / i as f64);
            }
            p.set(self.ind_x, cx, 1.0);
            p.set(self.ind_y, cy, 1.0);
        }
        p.set(self.ind_tok1, 0, 1.0);
        p
    }

    pub fn read_weight(&self, state: &Tensor<f64>, sample: usize) -> Vec<f64> {
        (0..self.d)
            .map(|r| state.at(self.weight.at(r), 2 * sample))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands_are_disjoint_and_fill_the_width() {
        let l = gd_layout(4, 2, 8);
        let mut seen = vec![false; l.width];
        let mut mark = |range: std::ops::Range<usize>| {
            for r in range {
                assert!(!seen[r], "row {r} assigned twice");
                seen[r] = true;
            }
        };
        mark(l.feat.rows());
        mark(l.label.rows());
        mark(l.scaled.rows());
        mark(l.resid.rows());
        mark(l.scratch.rows());
        mark(l.one_over_n..l.one_over_n + 1);
        mark(l.pos.rows());
        mark(l.ind_x..l.ind_x + 1);
        mark(l.ind_y..l.ind_y + 1);
        mark(l.ind_test..l.ind_test + 1);
        mark(l.ind_trail..l.ind_trail + 1);
        assert!(seen.iter().all(|b| *b), "no gaps");
    }

    #[test]
    fn gd_prompt_matches_the_lemma_blocks() {
        let l = gd_layout(2, 1, 0);
        let xs = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let ys = vec![vec![0.5], vec![-0.5]];
        let a0 = Tensor::zeros(vec![1, 2]);
        let p = l.build_prompt(&xs, &ys, &[9.0, 8.0], &a0);
        assert_eq!(p.cols(), 6, "2N+2 tokens");
        assert_eq!(p.at(l.feat.at(0), 0), 1.0);
        assert_eq!(p.at(l.scaled.at(1), 2), 2.0, "x/N with N=2");
        assert_eq!(p.at(l.label.at(0), 1), 0.5);
        assert_eq!(p.at(l.resid.at(0), 0), -0.5, "A0 = 0 seeds resid = -y");
        assert_eq!(p.at(l.resid.at(0), 4), 0.0, "A0 x_test with A0 = 0");
        assert_eq!(p.at(l.ind_x, 4), 1.0, "test counts as a feature token");
        assert_eq!(p.at(l.ind_y, 5), 1.0, "trailing token rides the y row");
        assert_eq!(p.at(l.ind_trail, 5), 1.0);
        assert_eq!(p.at(l.one_over_n, 5), 0.0);
        // every token is covered by exactly one of ind_x/ind_y
        for c in 0..6 {
            assert_eq!(p.at(l.ind_x, c) + p.at(l.ind_y, c), 1.0);
        }
    }

    #[test]
    fn decoder_prompt_scale_row_is_one_over_prefix() {
        let l = decoder_layout(2);
        let xs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let p = l.build_prompt(&xs, &[1.0, 2.0, 3.0]);
        assert_eq!(p.at(l.scale_row, 0), 0.0, "x_1 has an empty prefix");
        assert_eq!(p.at(l.scale_row, 2), 1.0, "x_2: 1/(2-1)");
        assert_eq!(p.at(l.scale_row, 4), 0.5, "x_3: 1/(3-1)");
        assert_eq!(p.at(l.shifted.at(1), 3), 1.0, "y_2 carries x_2");
        assert_eq!(p.at(l.ind_tok1, 0), 1.0);
    }
}
