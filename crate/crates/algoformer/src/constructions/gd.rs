//! Explicit weights realizing multivariate gradient descent and the full
//! representation-regression model around it.
//!
//! The loop layer uses two heads over the trailing-token score pin: with
//! the pin `C` dominating every softmax column, `e^C softmax(z) ~ 1 + z`,
//! head one couples queries to the 1/N-scaled features (z = (c/N) x_i.x_j)
//! and head two repeats the wiring with the coupling zeroed and values
//! negated, cancelling the constant term. What is left on the scratch
//! band is `c * dL/dA(A_k) x_j`; the feed-forward folds `-eta/c` of it
//! into the residual band and restores the scratch band to zero.

use crate::constructions::ffn::{band_selector, FfnProgram, GateExpr, ProductMode};
use crate::constructions::layout::GdLayout;
use crate::constructions::{ConstructionError, ConstructionScale, Result};
use crate::layer::{layer_forward_plain, AttentionMode, HeadParams, TransformerLayerParams};
use crate::tasks::Mlp;
use crate::tensor::Tensor;

/// One gradient-descent step per application (Lemma-style two heads).
pub fn build_gd_loop_layer(
    l: &GdLayout,
    s: &ConstructionScale,
) -> Result<TransformerLayerParams<f64>> {
    s.validate()?;
    let (d, w) = (l.d, l.width);
    let k = d + 1;
    let e_c = s.big_c.exp();

    let mut wq1 = band_selector(k, w, (0..d).map(|r| (r, l.feat.at(r))), s.small_c);
    wq1.set(d, l.ind_x, 1.0);
    wq1.set(d, l.ind_y, 1.0);
    let mut wk = band_selector(k, w, (0..d).map(|r| (r, l.scaled.at(r))), 1.0);
    wk.set(d, l.ind_trail, s.big_c);
    let wv1 = band_selector(
        w,
        w,
        (0..l.d_y).map(|r| (l.scratch.at(r), l.resid.at(r))),
        e_c,
    );

    // head two: same keys, query coupling zeroed, values negated
    let mut wq2 = Tensor::zeros(vec![k, w]);
    wq2.set(d, l.ind_x, 1.0);
    wq2.set(d, l.ind_y, 1.0);
    let wv2 = band_selector(
        w,
        w,
        (0..l.d_y).map(|r| (l.scratch.at(r), l.resid.at(r))),
        -e_c,
    );

    let mut prog = FfnProgram::new(w);
    for r in 0..l.d_y {
        prog = prog
            .linear(l.resid.at(r), l.scratch.at(r), -s.eta / s.small_c)
            .linear(l.scratch.at(r), l.scratch.at(r), -1.0);
    }
    let ffn = prog.compile();
    Ok(TransformerLayerParams {
        heads: vec![
            HeadParams {
                w_q: wq1,
                w_k: wk.clone(),
                w_v: wv1,
            },
            HeadParams {
                w_q: wq2,
                w_k: wk,
                w_v: wv2,
            },
        ],
        w1: ffn.w1,
        b1: ffn.b1,
        w2: ffn.w2,
        b2: ffn.b2,
        product_units: ffn.product_units,
    })
}

/// One representation layer: identity attention (zero values) and a
/// feed-forward that overwrites the feature band with
/// `leaky_relu(w_l * feat)`, cancelling the residual copy of the old
/// band. All other bands pass through untouched.
pub fn build_phi_overwrite_layer(
    width: usize,
    feat: crate::constructions::layout::Band,
    w_l: &Tensor<f64>,
    slope: f64,
) -> Result<TransformerLayerParams<f64>> {
    let (out_dim, in_dim) = (w_l.rows(), w_l.cols());
    if in_dim > feat.len || out_dim > feat.len {
        return Err(ConstructionError::BandMismatch {
            what: "phi layer",
            band: feat.len,
            needed: in_dim.max(out_dim),
        });
    }
    // hidden: [ReLU(W u_f); ReLU(-W u_f); ReLU(u_f); ReLU(-u_f)]
    let m = 2 * out_dim + 2 * feat.len;
    let mut w1 = Tensor::zeros(vec![m, width]);
    for r in 0..out_dim {
        for c in 0..in_dim {
            w1.set(r, feat.at(c), w_l.at(r, c));
            w1.set(out_dim + r, feat.at(c), -w_l.at(r, c));
        }
    }
    for r in 0..feat.len {
        w1.set(2 * out_dim + r, feat.at(r), 1.0);
        w1.set(2 * out_dim + feat.len + r, feat.at(r), -1.0);
    }
    let mut w2 = Tensor::zeros(vec![width, m]);
    for r in 0..out_dim {
        // sigma(a) = ReLU(a) - slope * ReLU(-a)
        w2.set(feat.at(r), r, 1.0);
        w2.set(feat.at(r), out_dim + r, -slope);
    }
    for r in 0..feat.len {
        // minus the residual copy of the old band
        w2.set(feat.at(r), 2 * out_dim + r, -1.0);
        w2.set(feat.at(r), 2 * out_dim + feat.len + r, 1.0);
    }
    // identity attention: a single all-zero head
    let zero_head = HeadParams {
        w_q: Tensor::zeros(vec![1, width]),
        w_k: Tensor::zeros(vec![1, width]),
        w_v: Tensor::zeros(vec![width, width]),
    };
    Ok(TransformerLayerParams {
        heads: vec![zero_head],
        w1,
        b1: Tensor::zeros(vec![m]),
        w2,
        b2: Tensor::zeros(vec![width]),
        product_units: vec![],
    })
}

/// The whole representation stack: one overwrite layer per MLP layer.
pub fn build_phi_layers(
    mlp: &Mlp,
    layout: &GdLayout,
) -> Result<Vec<TransformerLayerParams<f64>>> {
    mlp.weights
        .iter()
        .map(|w_l| build_phi_overwrite_layer(layout.width, layout.feat, w_l, mlp.slope))
        .collect()
}

/// The last pre layer: pair-matched attention moves each label onto both
/// tokens of its pair (halving it), then the feed-forward writes
/// `-2 * scratch` into the residual band of the sample feature tokens
/// (seeding A_0 = 0), multiplies the feature band by the token-carried
/// 1/N into the scaled band, and clears the scratch band.
pub fn build_label_broadcast_layer(
    l: &GdLayout,
    s: &ConstructionScale,
    product_mode: ProductMode,
) -> Result<TransformerLayerParams<f64>> {
    s.validate()?;
    if l.pos.len == 0 {
        return Err(ConstructionError::BandMismatch {
            what: "broadcast layer positional band",
            band: 0,
            needed: 1,
        });
    }
    let w = l.width;
    let wq = band_selector(l.pos.len, w, (0..l.pos.len).map(|r| (r, l.pos.at(r))), s.tau);
    let wk = band_selector(l.pos.len, w, (0..l.pos.len).map(|r| (r, l.pos.at(r))), 1.0);
    let wv = band_selector(
        w,
        w,
        (0..l.d_y).map(|r| (l.scratch.at(r), l.label.at(r))),
        1.0,
    );
    let gate_sample_x = GateExpr {
        terms: vec![(l.ind_x, 1.0), (l.ind_test, -1.0)],
        offset: 0.0,
    };
    let mut prog = FfnProgram::new(w).with_product_mode(product_mode);
    for r in 0..l.d_y {
        prog = prog
            .gated(l.resid.at(r), l.scratch.at(r), -2.0, gate_sample_x.clone())
            .linear(l.scratch.at(r), l.scratch.at(r), -1.0);
    }
    for r in 0..l.d {
        prog = prog.product(l.scaled.at(r), l.one_over_n, l.feat.at(r), 1.0);
    }
    let ffn = prog.compile();
    Ok(TransformerLayerParams {
        heads: vec![HeadParams {
            w_q: wq,
            w_k: wk,
            w_v: wv,
        }],
        w1: ffn.w1,
        b1: ffn.b1,
        w2: ffn.w2,
        b2: ffn.b2,
        product_units: ffn.product_units,
    })
}

/// The post layer: the query/trailing pair share a positional code, so
/// pair attention moves half the query's residual (= A_T phi(x_test))
/// onto the trailing token; the feed-forward rescales it by 2 into the
/// trailing token's label band.
pub fn build_post_readout_layer(
    l: &GdLayout,
    s: &ConstructionScale,
) -> Result<TransformerLayerParams<f64>> {
    s.validate()?;
    let w = l.width;
    let wq = band_selector(l.pos.len, w, (0..l.pos.len).map(|r| (r, l.pos.at(r))), s.tau);
    let wk = band_selector(l.pos.len, w, (0..l.pos.len).map(|r| (r, l.pos.at(r))), 1.0);
    let wv = band_selector(
        w,
        w,
        (0..l.d_y).map(|r| (l.scratch.at(r), l.resid.at(r))),
        1.0,
    );
    let gate_trail = GateExpr {
        terms: vec![(l.ind_trail, 1.0)],
        offset: 0.0,
    };
    let mut prog = FfnProgram::new(w);
    for r in 0..l.d_y {
        prog = prog
            .gated(l.label.at(r), l.scratch.at(r), 2.0, gate_trail.clone())
            .linear(l.scratch.at(r), l.scratch.at(r), -1.0);
    }
    let ffn = prog.compile();
    Ok(TransformerLayerParams {
        heads: vec![HeadParams {
            w_q: wq,
            w_k: wk,
            w_v: wv,
        }],
        w1: ffn.w1,
        b1: ffn.b1,
        w2: ffn.w2,
        b2: ffn.b2,
        product_units: ffn.product_units,
    })
}

/// The read-out of the construction layout: a selector of the label band
/// rows, applied at the answer token.
pub fn label_band_readout(l: &GdLayout) -> Tensor<f64> {
    band_selector(l.d_y, l.width, (0..l.d_y).map(|r| (r, l.label.at(r))), 1.0)
}

/// Pre (phi layers + broadcast), loop (one GD layer) and post stacks for
/// the representation-regression construction, plus everything needed to
/// run it on raw samples.
pub struct RepresentationModel {
    pub layout: GdLayout,
    pub pre: Vec<TransformerLayerParams<f64>>,
    pub loop_layer: TransformerLayerParams<f64>,
    pub post: TransformerLayerParams<f64>,
    pub codes: Vec<Vec<f64>>,
    pub scale: ConstructionScale,
}

impl RepresentationModel {
    pub fn build(
        phi: &Mlp,
        d_y: usize,
        codes: Vec<Vec<f64>>,
        scale: ConstructionScale,
        product_mode: ProductMode,
    ) -> Result<Self> {
        let d = phi.out_dim();
        let pos_dim = codes.first().map_or(0, |c| c.len());
        let layout = gd_layout_for(d, d_y, pos_dim);
        let mut pre = build_phi_layers(phi, &layout)?;
        pre.push(build_label_broadcast_layer(&layout, &scale, product_mode)?);
        let loop_layer = build_gd_loop_layer(&layout, &scale)?;
        let post = build_post_readout_layer(&layout, &scale)?;
        Ok(RepresentationModel {
            layout,
            pre,
            loop_layer,
            post,
            codes,
            scale,
        })
    }

    /// Raw prompt for this model: features and labels only; the scaled and
    /// residual bands start empty and are produced by the pre stack.
    pub fn build_prompt(&self, xs: &[Vec<f64>], ys: &[Vec<f64>], x_test: &[f64]) -> Tensor<f64> {
        let l = &self.layout;
        let n = xs.len();
        let mut p = Tensor::zeros(vec![l.width, l.n_tokens(n)]);
        for i in 0..n {
            let (cx, cy) = (2 * i, 2 * i + 1);
            for r in 0..l.d {
                p.set(l.feat.at(r), cx, xs[i][r]);
            }
            for r in 0..l.d_y {
                p.set(l.label.at(r), cy, ys[i][r]);
            }
            p.set(l.one_over_n, cx, 1.0 / n as f64);
            p.set(l.one_over_n, cy, 1.0 / n as f64);
            p.set(l.ind_x, cx, 1.0);
            p.set(l.ind_y, cy, 1.0);
        }
        let (ct, cz) = (2 * n, 2 * n + 1);
        for r in 0..l.d {
            p.set(l.feat.at(r), ct, x_test[r]);
        }
        p.set(l.ind_x, ct, 1.0);
        p.set(l.ind_y, cz, 1.0);
        p.set(l.ind_test, ct, 1.0);
        p.set(l.ind_trail, cz, 1.0);
        l.write_positionals(&mut p, &self.codes);
        p
    }

    /// Run pre, t loop applications and post; returns every state after
    /// the pre stack and each loop application, plus the post output.
    pub fn run(
        &self,
        prompt: &Tensor<f64>,
        t: usize,
    ) -> crate::tensor::Result<(Vec<Tensor<f64>>, Tensor<f64>)> {
        let mut state = prompt.clone();
        for layer in &self.pre {
            state = layer_forward_plain(layer, &state, AttentionMode::Full)?;
        }
        let mut states = vec![state.clone()];
        for _ in 0..t {
            state = layer_forward_plain(&self.loop_layer, &state, AttentionMode::Full)?;
            states.push(state.clone());
        }
        let out = layer_forward_plain(&self.post, &state, AttentionMode::Full)?;
        Ok((states, out))
    }

    /// The prediction: label band of the trailing token after post.
    pub fn prediction(&self, post_out: &Tensor<f64>) -> Vec<f64> {
        let trail = post_out.cols() - 1;
        (0..self.layout.d_y)
            .map(|r| post_out.at(self.layout.label.at(r), trail))
            .collect()
    }
}

pub fn gd_layout_for(d: usize, d_y: usize, pos_dim: usize) -> GdLayout {
    crate::constructions::layout::gd_layout(d, d_y, pos_dim)
}

/// Oracle: the explicit gradient-descent iterates
/// `A_{k+1} = A_k - (eta/N) sum (A_k x_j - y_j) x_j^T`.
pub fn gd_oracle(
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    a0: &Tensor<f64>,
    eta: f64,
    steps: usize,
) -> Vec<Tensor<f64>> {
    let n = xs.len();
    let (d_y, d) = (a0.rows(), a0.cols());
    let mut a = a0.clone();
    let mut out = vec![a.clone()];
    for _ in 0..steps {
        let mut grad = Tensor::<f64>::zeros(vec![d_y, d]);
        for j in 0..n {
            let r: Vec<f64> = (0..d_y)
                .map(|p| {
                    let ax: f64 = (0..d).map(|q| a.at(p, q) * xs[j][q]).sum();
                    ax - ys[j][p]
                })
                .collect();
            for p in 0..d_y {
                for q in 0..d {
                    let v = grad.at(p, q) + r[p] * xs[j][q] / n as f64;
                    grad.set(p, q, v);
                }
            }
        }
        a = Tensor::from_fn(d_y, d, |p, q| a.at(p, q) - eta * grad.at(p, q));
        out.push(a.clone());
    }
    out
}
