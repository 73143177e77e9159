//! Property tests for the numeric invariants that hold for every input,
//! not just the hand-picked cases.

use algoformer::layer::{init_params, layer_forward_plain, AttentionMode, InitScheme};
use algoformer::tape::column_softmax_plain;
use algoformer::tensor::Tensor;
use proptest::prelude::*;

fn finite_vec(len: usize, mag: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-mag..mag, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every softmax column sums to one within 1e-12 and every entry lies
    /// in (0, 1). Score gaps are kept below ~30: past ln(2^53) the losing
    /// entries round to 0 and the winner to exactly 1 in f64.
    #[test]
    fn softmax_columns_are_distributions(data in finite_vec(5 * 4, 15.0)) {
        let z = Tensor::new(data, vec![5, 4]).unwrap();
        let y = column_softmax_plain(&z);
        for j in 0..4 {
            let sum: f64 = (0..5).map(|i| y.at(i, j)).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "column {j} sums to {sum}");
            for i in 0..5 {
                let v = y.at(i, j);
                prop_assert!(v > 0.0 && v < 1.0, "entry ({i},{j}) = {v}");
            }
        }
    }

    /// Shift invariance: adding a constant to one column leaves that
    /// column's softmax unchanged (to 1e-12).
    #[test]
    fn softmax_shift_invariance(data in finite_vec(4 * 3, 20.0), c in -100.0f64..100.0) {
        let z = Tensor::new(data, vec![4, 3]).unwrap();
        let mut shifted = z.clone();
        for i in 0..4 {
            let v = shifted.at(i, 1) + c;
            shifted.set(i, 1, v);
        }
        let a = column_softmax_plain(&z);
        let b = column_softmax_plain(&shifted);
        for i in 0..4 {
            prop_assert!((a.at(i, 1) - b.at(i, 1)).abs() <= 1e-12);
        }
    }

    /// (AB)C = A(BC) within 1e-10 relative Frobenius error.
    #[test]
    fn matmul_associativity(
        a in finite_vec(3 * 4, 3.0),
        b in finite_vec(4 * 5, 3.0),
        c in finite_vec(5 * 2, 3.0),
    ) {
        let a = Tensor::new(a, vec![3, 4]).unwrap();
        let b = Tensor::new(b, vec![4, 5]).unwrap();
        let c = Tensor::new(c, vec![5, 2]).unwrap();
        let left = a.matmul_plain(&b).unwrap().matmul_plain(&c).unwrap();
        let right = a.matmul_plain(&b.matmul_plain(&c).unwrap()).unwrap();
        let diff = left.max_abs_diff(&right);
        let scale = left.frobenius_norm().max(1e-30);
        prop_assert!(diff / scale <= 1e-10, "relative deviation {}", diff / scale);
    }

    /// Zeroing the value matrices and the second feed-forward matrix
    /// makes the layer a bitwise identity for any input.
    #[test]
    fn residual_identity_is_bitwise(data in finite_vec(6 * 5, 10.0), seed in 0u64..1000) {
        let mut rng = algoformer::seed::stream(seed, "prop");
        let mut p = init_params::<f64, _>(6, 3, 8, 2, InitScheme::Gaussian { std: 0.4 }, &mut rng);
        for h in &mut p.heads {
            h.w_v = Tensor::zeros(vec![6, 6]);
        }
        p.w2 = Tensor::zeros(vec![6, 8]);
        p.b2 = Tensor::zeros(vec![6]);
        let x = Tensor::new(data, vec![6, 5]).unwrap();
        let out = layer_forward_plain(&p, &x, AttentionMode::Full).unwrap();
        prop_assert_eq!(out.data(), x.data());
    }

    /// In causal mode, column j of the output is a function of columns
    /// 1..=j only: perturbing any suffix leaves the prefix bitwise fixed.
    #[test]
    fn causal_suffix_invariance(
        data in finite_vec(4 * 6, 5.0),
        noise in finite_vec(4 * 2, 50.0),
        seed in 0u64..1000,
    ) {
        let mut rng = algoformer::seed::stream(seed, "prop-causal");
        let p = init_params::<f64, _>(4, 2, 8, 2, InitScheme::Gaussian { std: 0.3 }, &mut rng);
        let x = Tensor::new(data, vec![4, 6]).unwrap();
        let mut x2 = x.clone();
        for (k, v) in noise.iter().enumerate() {
            let (r, c) = (k % 4, 4 + k / 4);
            x2.set(r, c, *v);
        }
        let a = layer_forward_plain(&p, &x, AttentionMode::Causal).unwrap();
        let b = layer_forward_plain(&p, &x2, AttentionMode::Causal).unwrap();
        for j in 0..4 {
            for r in 0..4 {
                prop_assert_eq!(a.at(r, j).to_bits(), b.at(r, j).to_bits());
            }
        }
    }

    /// Task batches are a pure function of (spec, seed, step).
    #[test]
    fn batch_generation_is_deterministic(seed in 0u64..500, step in 0u64..50) {
        let spec = algoformer::tasks::lr_spec(3, 4, 0.5);
        let a = algoformer::tasks::gen_batch(&spec, seed, step, 2).unwrap();
        let b = algoformer::tasks::gen_batch(&spec, seed, step, 2).unwrap();
        prop_assert_eq!(a.prompts, b.prompts);
    }

    /// Sparse masking zeroes exactly round(s * d) coordinates.
    #[test]
    fn sparse_mask_count_is_exact(seed in 0u64..300, s in 0.05f64..0.95) {
        let spec = algoformer::tasks::TaskSpec {
            family: algoformer::tasks::TaskFamily::SparseLinearRegression,
            sparsity: s,
            ..algoformer::tasks::lr_spec(16, 4, 0.0)
        };
        let mut rng = algoformer::seed::stream(seed, "prop-sparse");
        let samples = algoformer::tasks::gen_linear_regression(&spec, &mut rng).unwrap();
        let zeros = samples.truth.data().iter().filter(|v| **v == 0.0).count();
        prop_assert_eq!(zeros, (s * 16.0).round() as usize);
    }
}
