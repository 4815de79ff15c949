use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ssm_influence::influence::{
    exact_channel_magnitude, influence_direct_sum, influence_fast, influence_fast_channels, AdjacencyConvention,
};
use ssm_influence::ssm::{forward_scan_dense, forward_scan_diagonal, DiagonalLtvSequence, InputScaling};
use ssm_influence::verify::random_sequence;

use nalgebra::DVector;

const CONVENTIONS: [AdjacencyConvention; 2] = [AdjacencyConvention::Paper, AdjacencyConvention::Standard];
const SCALINGS: [InputScaling; 2] = [InputScaling::Raw, InputScaling::DeltaScaled];

fn seq_strategy() -> impl Strategy<Value = (DiagonalLtvSequence, u64)> {
    (1usize..=16, 1usize..=4, 1usize..=8, any::<u64>()).prop_map(|(l, dm, n, seed)| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (random_sequence(&mut rng, l, dm, n, -1.0, 1.0), seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_matches_direct((seq, _) in seq_strategy()) {
        for s in SCALINGS {
            for c in CONVENTIONS {
                let fast = influence_fast(&seq, s, c).unwrap();
                let direct = influence_direct_sum(&seq, s, c).unwrap();
                for (f, d) in fast.iter().zip(&direct) {
                    prop_assert!((f - d).abs() <= 1e-9 * d.abs().max(1e-300), "{f} vs {d}");
                    prop_assert!(*f >= 0.0 && f.is_finite());
                }
            }
        }
    }

    #[test]
    fn scan_is_linear_in_input((seq, seed) in seq_strategy(), alpha in -3.0f64..3.0) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 1);
        let n = seq.len() * seq.channels();
        let u = ssm_influence::verify::random_sequence(&mut rng, n, 1, 1, -1.0, 1.0).b_slice().to_vec();
        let v = ssm_influence::verify::random_sequence(&mut rng, n, 1, 1, -1.0, 1.0).b_slice().to_vec();
        let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + b).collect();
        let y = |x: &[f64]| forward_scan_diagonal(&seq, x, None, InputScaling::Raw).unwrap().outputs;
        let (yu, yv, yc) = (y(&u), y(&v), y(&combo));
        for i in 0..n {
            let expect = alpha * yu[i] + yv[i];
            prop_assert!((yc[i] - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn dense_embedding_agrees_with_diagonal((seq, seed) in seq_strategy()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 2);
        let (l, dm) = (seq.len(), seq.channels());
        let u = random_sequence(&mut rng, l * dm, 1, 1, -1.0, 1.0).c_slice().to_vec();
        for s in SCALINGS {
            let diag = forward_scan_diagonal(&seq, &u, None, s).unwrap().outputs;
            let dense = seq.to_dense(s);
            let inputs: Vec<DVector<f64>> = u.chunks(dm).map(DVector::from_column_slice).collect();
            let ys = forward_scan_dense(&dense, &inputs, None).unwrap();
            for (k, y) in ys.iter().enumerate() {
                for d in 0..dm {
                    prop_assert!((y[d] - diag[k * dm + d]).abs() <= 1e-12 * (1.0 + y[d].abs()));
                }
            }
        }
    }

    #[test]
    fn absolute_score_bounds_signed_magnitude((seq, _) in seq_strategy()) {
        let seq = DiagonalLtvSequence::from_abc(
            seq.len(), seq.channels(), seq.state_dim(),
            seq.a_bar_slice().to_vec(), seq.b_slice().to_vec(), seq.c_slice().to_vec(),
        ).unwrap();
        for c in CONVENTIONS {
            let abs = influence_fast_channels(&seq, InputScaling::Raw, c);
            for k in 0..seq.len() {
                for d in 0..seq.channels() {
                    let exact = exact_channel_magnitude(&seq, k, d, InputScaling::Raw, c).unwrap();
                    prop_assert!(exact <= abs[k * seq.channels() + d] * (1.0 + 1e-12) + 1e-300);
                }
            }
        }
    }
}

#[test]
fn constant_nonnegative_parameters_decay_with_position() {
    let l = 12;
    let seq = DiagonalLtvSequence::from_abc(l, 2, 3, vec![0.8; l * 6], vec![0.5; l * 6], vec![0.7; l * 6]).unwrap();
    for c in CONVENTIONS {
        let s = influence_fast(&seq, InputScaling::Raw, c).unwrap();
        // Earlier tokens reach more outputs; the last token only has its direct term.
        for k in 0..l - 2 {
            assert!(s[k] >= s[k + 1], "{c:?} k={k}: {} < {}", s[k], s[k + 1]);
        }
    }
}

#[test]
fn zero_input_map_gives_zero_scores() {
    let l = 5;
    let seq = DiagonalLtvSequence::from_abc(l, 1, 2, vec![0.9; l * 2], vec![0.0; l * 2], vec![1.0; l * 2]).unwrap();
    for c in CONVENTIONS {
        assert!(influence_fast(&seq, InputScaling::Raw, c).unwrap().iter().all(|&v| v == 0.0));
    }
}
