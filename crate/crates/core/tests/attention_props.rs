mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparsecoder::attention::{global_rows, AttentionConfig, SparseAttentionLayer};
use sparsecoder::kernels::sparse_forward;
use sparsecoder::mask::{AttentionMaskSpec, AttentionPattern};
use sparsecoder::tensor::Tensor;

fn layer(d_h: usize, heads: usize, seed: u64) -> SparseAttentionLayer {
    let cfg = AttentionConfig { d_h, heads, r: 2, w: 4, ..AttentionConfig::default() };
    SparseAttentionLayer::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sparse_matches_masked_dense(seed in any::<u64>(), n in 1usize..24, w in 2usize..10, heads in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_subset(&mut rng, n, 0.1);
        let i = common::random_subset(&mut rng, n, 0.3);
        let spec = AttentionMaskSpec::new(n, w, &g, &i).unwrap();
        let dk = 3;
        let (q, k, v) = (Tensor::randn(n, heads * dk, 1.0, &mut rng), Tensor::randn(n, heads * dk, 1.0, &mut rng), Tensor::randn(n, heads * dk, 1.0, &mut rng));
        let (out, _) = sparse_forward(&q, &k, &v, heads, &AttentionPattern::from_spec(&spec), false);
        let oracle = common::masked_attention_oracle(&q, &k, &v, heads, &|a, b| spec.allows(a, b));
        prop_assert!(out.max_abs_diff(&oracle) < 1e-9);
    }

    #[test]
    fn weights_form_distributions(seed in any::<u64>(), n in 1usize..24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = AttentionMaskSpec::new(n, 4, &common::random_subset(&mut rng, n, 0.1), &common::random_subset(&mut rng, n, 0.3)).unwrap();
        let pattern = AttentionPattern::from_spec(&spec);
        let t = || Tensor::randn(n, 4, 3.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let (_, probs) = sparse_forward(&t(), &t(), &t(), 2, &pattern, true);
        for h in 0..2 {
            for r in 0..n {
                let (a, b) = (pattern.row_ptr()[r], pattern.row_ptr()[r + 1]);
                let s: f64 = probs[h * pattern.nnz() + a..h * pattern.nnz() + b].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(probs[h * pattern.nnz() + a..h * pattern.nnz() + b].iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn constant_values_pass_through(seed in any::<u64>(), n in 1usize..20) {
        // Softmax weights sum to one, so identical value rows are reproduced.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = AttentionMaskSpec::new(n, 4, &[], &common::random_subset(&mut rng, n, 0.4)).unwrap();
        let q = Tensor::randn(n, 4, 1.0, &mut rng);
        let k = Tensor::randn(n, 4, 1.0, &mut rng);
        let row: Vec<f64> = (0..4).map(|c| c as f64 - 1.5).collect();
        let v = Tensor::from_vec(n, 4, row.iter().cycle().take(4 * n).copied().collect()).unwrap();
        let (out, _) = sparse_forward(&q, &k, &v, 2, &AttentionPattern::from_spec(&spec), false);
        prop_assert!(out.max_abs_diff(&v) < 1e-12);
    }
}

#[test]
fn layer_output_is_finite_on_long_input() {
    let l = layer(16, 2, 3);
    let n = 300;
    let spec = AttentionMaskSpec::new(n, 16, &[0, 150], &(10..60).collect::<Vec<_>>()).unwrap();
    let h = Tensor::randn(n, 16, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let out = l.forward(&h, &spec).unwrap();
    assert!(out.all_finite());
    assert_eq!(global_rows(&spec).iter().filter(|&&b| b).count(), 2);
}
