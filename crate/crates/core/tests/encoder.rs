use codeattn::encoder::{
    apply_masking, batch_loss, encode, loss_and_gradients, make_nsp_pairs, mask_for_mlm,
    mlm_predict, nsp_pair_at, train_step, EncoderConfig, EncoderParams, MaskBranch, NspChoice,
    TrainingExample,
};
use codeattn::subtok::{CLS_ID, MASK_ID, SEP_ID};
use codeattn::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

fn tiny() -> EncoderConfig {
    EncoderConfig {
        num_layers: 1,
        num_heads: 2,
        hidden_dim: 8,
        ffn_dim: 16,
        max_seq_len: 12,
        vocab_size: 20,
        seed: 5,
    }
}

/// Parameters drawn wider than the training init so every gradient is
/// comfortably above finite-difference noise.
fn wide_params(config: &EncoderConfig, seed: u64) -> EncoderParams {
    let mut params = EncoderParams::init(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.5).unwrap();
    params.for_each_mut(|_, mut t| t.mapv_inplace(|_| rng.sample(normal)));
    params
}

fn batch() -> Vec<TrainingExample> {
    vec![
        TrainingExample {
            ids: vec![CLS_ID, 7, MASK_ID, 9, SEP_ID, 11, 12, SEP_ID],
            segments: vec![0, 0, 0, 0, 0, 1, 1, 1],
            mlm_positions: vec![2, 6],
            mlm_targets: vec![8, 13],
            nsp_label: Some(true),
        },
        TrainingExample {
            ids: vec![CLS_ID, 15, 16, SEP_ID, MASK_ID, SEP_ID],
            segments: vec![0, 0, 0, 0, 1, 1],
            mlm_positions: vec![4],
            mlm_targets: vec![17],
            nsp_label: Some(false),
        },
    ]
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let config = tiny();
    let params = wide_params(&config, 99);
    let batch = batch();
    let (_, grads) = loss_and_gradients(&batch, &params, &config).unwrap();
    let eps = 1e-4;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.iter().copied().collect()))
        .collect();

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (k, (name, a)) in analytic.iter().enumerate() {
        let len = a.len();
        let mut numeric = vec![0.0; len];
        for (i, num) in numeric.iter_mut().enumerate() {
            let original = {
                let mut ts = probe.tensors_mut();
                let v = &mut ts[k].1;
                let cell = v.iter_mut().nth(i).unwrap();
                let o = *cell;
                *cell = o + eps;
                o
            };
            let plus = batch_loss(&batch, &probe, &config).unwrap().loss();
            set(&mut probe, k, i, original - eps);
            let minus = batch_loss(&batch, &probe, &config).unwrap().loss();
            set(&mut probe, k, i, original);
            *num = (plus - minus) / (2.0 * eps);
        }
        let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = norm(a).max(norm(&numeric)).max(1e-8);
        let rel = diff / scale;
        assert!(rel < 1e-3, "{name}: relative error {rel:e}");
        worst = worst.max(rel);
    }
    assert!(worst < 1e-3);
}

fn set(params: &mut EncoderParams, k: usize, i: usize, value: f64) {
    let mut ts = params.tensors_mut();
    *ts[k].1.iter_mut().nth(i).unwrap() = value;
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn zero_learning_rate_leaves_params_bit_identical() {
    let config = tiny();
    let mut params = EncoderParams::init(&config).unwrap();
    let before = params.clone();
    train_step(&batch(), &mut params, &config, 0.0).unwrap();
    assert_eq!(params, before);
    assert_eq!(params.checksum(), before.checksum());
}

#[test]
fn non_finite_parameters_raise_divergence() {
    let config = tiny();
    let mut params = EncoderParams::init(&config).unwrap();
    params.mlm_bias[3] = f64::NAN;
    match train_step(&batch(), &mut params, &config, 0.1) {
        Err(Error::Divergence { tensor }) => assert!(tensor.contains("mlm"), "{tensor}"),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn memorizes_a_single_sentence() {
    let config = EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        hidden_dim: 32,
        ffn_dim: 64,
        max_seq_len: 16,
        vocab_size: 30,
        seed: 1,
    };
    let sentence: Vec<u32> = vec![CLS_ID, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, SEP_ID];
    let n = sentence.len();
    let mut params = EncoderParams::init(&config).unwrap();
    for _ in 0..500 {
        // one example per word position, each with that word masked
        let batch: Vec<TrainingExample> = (1..n - 1)
            .map(|p| {
                let mut ids = sentence.clone();
                ids[p] = MASK_ID;
                TrainingExample {
                    ids,
                    segments: vec![0; n],
                    mlm_positions: vec![p],
                    mlm_targets: vec![sentence[p]],
                    nsp_label: None,
                }
            })
            .collect();
        train_step(&batch, &mut params, &config, 0.5).unwrap();
    }
    for p in 1..n - 1 {
        let mut ids = sentence.clone();
        ids[p] = MASK_ID;
        let predicted = mlm_predict(&ids, &[p], &params, &config).unwrap();
        assert_eq!(predicted, vec![sentence[p]], "position {p}");
    }
}

#[test]
fn zero_mlm_head_predicts_lowest_id() {
    let config = tiny();
    let mut params = EncoderParams::init(&config).unwrap();
    params.mlm_weight.fill(0.0);
    params.mlm_bias.fill(0.0);
    let ids = [CLS_ID, MASK_ID, 9, MASK_ID, SEP_ID];
    let predicted = mlm_predict(&ids, &[3, 1], &params, &config).unwrap();
    assert_eq!(predicted, vec![0, 0]);
}

#[test]
fn mlm_predict_rejects_out_of_range_position() {
    let config = tiny();
    let params = EncoderParams::init(&config).unwrap();
    assert!(mlm_predict(&[CLS_ID, 5, SEP_ID], &[3], &params, &config).is_err());
}

#[test]
fn permuting_tokens_changes_hidden_states() {
    let config = tiny();
    let params = wide_params(&config, 3);
    let ids = [CLS_ID, 7, 8, 9, 10, SEP_ID];
    let base = encode(&ids, &[0; 6], &params, &config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..ids.len()).collect();
        while perm.iter().enumerate().all(|(i, &p)| i == p) {
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
        }
        let permuted: Vec<u32> = perm.iter().map(|&p| ids[p]).collect();
        let out = encode(&permuted, &[0; 6], &params, &config).unwrap();
        // a permutation is invisible only if the states move with the tokens
        let moved = perm.iter().enumerate().all(|(i, &p)| {
            out.hidden_states[1]
                .row(i)
                .iter()
                .zip(base.hidden_states[1].row(p))
                .all(|(a, b)| (a - b).abs() < 1e-9)
        });
        assert!(!moved, "permutation {perm:?} left hidden states unchanged");
    }
}

#[test]
fn forced_keep_branch_leaves_ids_intact() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ids = [CLS_ID, 12, SEP_ID];
    let masked = apply_masking(&ids, &[(1, MaskBranch::Keep)], 20, &mut rng);
    assert_eq!(masked.ids, ids);
    assert_eq!(masked.positions, vec![1]);
    assert_eq!(masked.targets, vec![12]);
}

#[test]
fn forced_mask_branch_uses_mask_id() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let masked = apply_masking(&[CLS_ID, 12, 13, SEP_ID], &[(2, MaskBranch::Mask)], 20, &mut rng);
    assert_eq!(masked.ids, vec![CLS_ID, 12, MASK_ID, SEP_ID]);
}

#[test]
fn masking_never_selects_special_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ids = [CLS_ID, 8, 9, SEP_ID, 10, SEP_ID];
    let special = [true, false, false, true, false, true];
    for _ in 0..2000 {
        let m = mask_for_mlm(&ids, &special, 20, &mut rng).unwrap();
        assert!(m.positions.iter().all(|&p| !special[p]));
        for (i, &s) in special.iter().enumerate() {
            if s {
                assert_eq!(m.ids[i], ids[i]);
            }
        }
    }
}

#[test]
fn all_special_sequence_cannot_be_masked() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r = mask_for_mlm(&[CLS_ID, SEP_ID], &[true, true], 20, &mut rng);
    assert!(matches!(r, Err(Error::NothingToMask)));
}

#[test]
fn forced_is_next_pair() {
    let docs = vec![vec!["a", "b"], vec!["c", "d"]];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pair = nsp_pair_at(&docs, 0, 0, NspChoice::IsNext, &mut rng).unwrap();
    assert!(pair.is_next);
    assert_eq!((pair.first.document, pair.first.sentence), (0, 0));
    assert_eq!((pair.second.document, pair.second.sentence), (0, 1));
}

#[test]
fn single_document_has_no_negatives() {
    let docs = vec![vec!["a", "b", "c"]];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(make_nsp_pairs(&docs, &mut rng), Err(Error::NoNegatives(_))));
}

#[test]
fn negatives_come_from_other_documents_and_differ_from_next() {
    let docs = vec![
        vec!["x", "y", "z"],
        vec!["y", "x", "w"],
        vec!["z", "y", "x", "y"],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..500 {
        for pair in make_nsp_pairs(&docs, &mut rng).unwrap() {
            if !pair.is_next {
                assert_ne!(pair.second.document, pair.first.document);
                let next = docs[pair.first.document][pair.first.sentence + 1];
                assert_ne!(docs[pair.second.document][pair.second.sentence], next);
            }
        }
    }
}
