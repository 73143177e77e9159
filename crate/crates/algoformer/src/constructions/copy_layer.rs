//! A q-head layer that copies the previous q tokens' features into q
//! dedicated bands of the present token. Head i matches the lagged code
//! p_{t-i} carried by token t against the current codes p_j; the
//! feed-forward zeroes the bands whose source index t-i falls before the
//! start of the sequence, using the integer index row.

use crate::constructions::ffn::{band_selector, FfnProgram, GateExpr};
use crate::constructions::layout::CopyLayout;
use crate::constructions::{ConstructionScale, Result};
use crate::layer::{HeadParams, TransformerLayerParams};

pub fn build_copy_layer(
    l: &CopyLayout,
    s: &ConstructionScale,
) -> Result<TransformerLayerParams<f64>> {
    s.validate()?;
    let w = l.width;
    let mut heads = Vec::with_capacity(l.q);
    for lag in 1..=l.q {
        let wq = band_selector(
            l.pos_now.len,
            w,
            (0..l.pos_now.len).map(|r| (r, l.pos_lag[lag - 1].at(r))),
            s.tau,
        );
        let wk = band_selector(
            l.pos_now.len,
            w,
            (0..l.pos_now.len).map(|r| (r, l.pos_now.at(r))),
            1.0,
        );
        let wv = band_selector(
            w,
            w,
            (0..l.d).map(|r| (l.copies[lag - 1].at(r), l.feat.at(r))),
            1.0,
        );
        heads.push(HeadParams {
            w_q: wq,
            w_k: wk,
            w_v: wv,
        });
    }
    let mut prog = FfnProgram::new(w);
    for lag in 1..=l.q {
        // keep band `lag` iff t - lag >= 1
        let gate = GateExpr {
            terms: vec![(l.index_row, 1.0)],
            offset: -(lag as f64),
        };
        for r in 0..l.d {
            let row = l.copies[lag - 1].at(r);
            prog = prog.gated(row, row, 1.0, gate.clone()).linear(row, row, -1.0);
        }
    }
    let ffn = prog.compile();
    Ok(TransformerLayerParams {
        heads,
        w1: ffn.w1,
        b1: ffn.b1,
        w2: ffn.w2,
        b2: ffn.b2,
        product_units: ffn.product_units,
    })
}
