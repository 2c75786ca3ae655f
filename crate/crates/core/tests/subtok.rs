use ndarray::Array4;
use proptest::prelude::*;

use codeattn::subtok::{
    aggregate_attention, tokenize, train_vocab, AlignmentMap, Unit, UnitKind, UNK_ID,
};
use codeattn::AttentionTensor;

/// Random stochastic tensor over `n` subtokens and a random partition of
/// those subtokens into contiguous units.
fn tensor_and_alignment() -> impl Strategy<Value = (Array4<f64>, AlignmentMap)> {
    (1usize..=2, 1usize..=3, proptest::collection::vec(1usize..=4, 1..8)).prop_flat_map(
        |(layers, heads, widths)| {
            let n: usize = widths.iter().sum();
            proptest::collection::vec(0.001f64..1.0, layers * heads * n * n).prop_map(move |raw| {
                let mut values = Array4::from_shape_vec((layers, heads, n, n), raw).unwrap();
                for mut row in values.rows_mut() {
                    let s = row.sum();
                    row /= s;
                }
                let mut units = Vec::new();
                let mut start = 0;
                for (i, w) in widths.iter().enumerate() {
                    units.push(Unit {
                        kind: UnitKind::Word { segment: 0, token: i },
                        range: start..start + w,
                    });
                    start += w;
                }
                (values, AlignmentMap::new(units).unwrap())
            })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn aggregation_preserves_row_stochasticity((values, map) in tensor_and_alignment()) {
        let att = AttentionTensor::new(values).unwrap();
        prop_assert!(att.max_stochastic_error() < 1e-9);
        let words = aggregate_attention(&att, &map).unwrap();
        prop_assert_eq!(words.seq_len(), map.num_units());
        prop_assert!(words.max_stochastic_error() < 1e-5);
    }

    #[test]
    fn pieces_rejoin_to_the_original_words(
        corpus in proptest::collection::vec("[a-zA-Z_][a-zA-Z0-9_]{0,10}", 1..30),
        target in 70usize..120,
    ) {
        let vocab = train_vocab(corpus.iter().map(String::as_str), target).unwrap();
        let enc = tokenize(&corpus, &vocab, 512);
        for unit in enc.alignment.units() {
            if let UnitKind::Word { token, .. } = unit.kind {
                let ids = &enc.ids[unit.range.clone()];
                if !ids.contains(&UNK_ID) {
                    prop_assert_eq!(vocab.detokenize(ids), corpus[token].clone());
                }
            }
        }
    }
}

#[test]
fn three_subtoken_example_is_columns_then_rows() {
    let values = Array4::from_shape_vec(
        (1, 1, 3, 3),
        vec![0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.2, 0.2, 0.6],
    )
    .unwrap();
    let map = AlignmentMap::new(vec![
        Unit { kind: UnitKind::Word { segment: 0, token: 0 }, range: 0..1 },
        Unit { kind: UnitKind::Word { segment: 0, token: 1 }, range: 1..3 },
    ])
    .unwrap();
    let words = aggregate_attention(&AttentionTensor::new(values).unwrap(), &map).unwrap();
    let expected = [[0.5, 0.5], [0.15, 0.85]];
    for (i, row) in expected.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!((words.get(0, 0, i, j) - v).abs() < 1e-12);
        }
    }
}
