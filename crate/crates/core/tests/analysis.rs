use ndarray::{Array2, Array4};
use proptest::prelude::*;

use codeattn::analysis::{
    construct_attention, head_redundancy, identifier_relationship, relative_position_attention,
    run_all, special_token_attention, AnalysisRecord, Mode, WordAttention, WordLabel,
};
use codeattn::lexer::TokenType;
use codeattn::AttentionTensor;

const IDF: WordLabel = WordLabel::Token(TokenType::Identifier);

fn from_matrix(m: Array2<f64>, labels: Vec<WordLabel>) -> WordAttention {
    let n = m.nrows();
    let values = m.into_shape_with_order((1, 1, n, n)).unwrap();
    WordAttention::new(AttentionTensor::new(values).unwrap(), labels).unwrap()
}

fn find<'a>(records: &'a [AnalysisRecord], class: &str, mode: &str) -> &'a AnalysisRecord {
    records.iter().find(|r| r.class == class && r.mode == mode).unwrap()
}

#[test]
fn identity_attention_is_all_self() {
    let r = relative_position_attention(&[from_matrix(Array2::eye(4), vec![IDF; 4])]).unwrap();
    assert_eq!(find(&r, "self", "mass").value, 1.0);
    assert_eq!(find(&r, "prev", "mass").value, 0.0);
    assert_eq!(find(&r, "next", "mass").value, 0.0);
}

#[test]
fn uniform_rows_give_one_over_n_everywhere() {
    let n = 5;
    let r = relative_position_attention(&[from_matrix(Array2::from_elem((n, n), 0.2), vec![IDF; n])]).unwrap();
    for class in ["self", "prev", "next"] {
        assert!((find(&r, class, "mass").value - 0.2).abs() < 1e-12);
    }
}

#[test]
fn all_identifier_sequence_sends_everything_to_idf() {
    let m = Array2::from_shape_vec((3, 3), vec![0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.2, 0.2, 0.6]).unwrap();
    let seq = from_matrix(m, vec![IDF; 3]);
    let c = construct_attention(std::slice::from_ref(&seq), &[Mode::Mass]).unwrap();
    assert!((find(&c, "IDF", "mass").value - 1.0).abs() < 1e-12);
    assert!(c.iter().all(|r| r.class == "IDF"), "absent classes contribute no sample");
    let i = identifier_relationship(&[seq]).unwrap();
    assert!((find(&i, "IDF", "mass").value - 1.0).abs() < 1e-12);
    for class in ["SEPS", "OP", "DTP", "KEY", "MOD", "residual"] {
        assert!(find(&i, class, "mass").value.abs() < 1e-12);
    }
}

#[test]
fn no_identifiers_is_an_error() {
    let seq = from_matrix(Array2::eye(2), vec![WordLabel::Token(TokenType::Operator); 2]);
    assert!(identifier_relationship(&[seq]).is_err());
}

#[test]
fn empty_corpus_is_an_error() {
    assert!(special_token_attention(&[], &Mode::BOTH).is_err());
    assert!(relative_position_attention(&[]).is_err());
    assert!(head_redundancy(&[]).is_err());
}

fn random_sequence(layers: usize, heads: usize) -> impl Strategy<Value = WordAttention> {
    let label = prop_oneof![
        Just(IDF),
        Just(WordLabel::Token(TokenType::Separator)),
        Just(WordLabel::Token(TokenType::Operator)),
        Just(WordLabel::Token(TokenType::Keyword)),
        Just(WordLabel::Token(TokenType::StringLiteral)),
    ];
    proptest::collection::vec(label, 2..7).prop_flat_map(move |inner| {
        let n = inner.len() + 2;
        proptest::collection::vec(0.001f64..1.0, layers * heads * n * n).prop_map(move |raw| {
            let mut values = Array4::from_shape_vec((layers, heads, n, n), raw).unwrap();
            for mut row in values.rows_mut() {
                let s = row.sum();
                row /= s;
            }
            let mut labels = vec![WordLabel::Cls];
            labels.extend(inner.iter().copied());
            labels.push(WordLabel::Sep);
            WordAttention::new(AttentionTensor::new(values).unwrap(), labels).unwrap()
        })
    })
}

fn corpus() -> impl Strategy<Value = Vec<WordAttention>> {
    proptest::collection::vec(random_sequence(2, 2), 2..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analyses_are_permutation_stable(corpus in corpus(), rotation in 0usize..6) {
        let mut shuffled = corpus.clone();
        let k = rotation % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = run_all(&corpus, &Mode::BOTH);
        let b = run_all(&shuffled, &Mode::BOTH);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                for ((_, ra), (_, rb)) in a.tables().iter().zip(b.tables().iter()) {
                    prop_assert_eq!(ra.len(), rb.len());
                    for (x, y) in ra.iter().zip(rb.iter()) {
                        prop_assert_eq!((&x.class, x.layer, x.head, x.n), (&y.class, y.layer, y.head, y.n));
                        prop_assert!((x.value - y.value).abs() < 1e-9);
                    }
                }
                let d = &a.redundancy_matrix.values - &b.redundancy_matrix.values;
                prop_assert!(d.iter().all(|v| v.abs() < 1e-9));
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "order changed whether the analyses succeed"),
        }
    }

    #[test]
    fn class_masses_and_residual_sum_to_one(seq in random_sequence(2, 3)) {
        if let Ok(records) = identifier_relationship(std::slice::from_ref(&seq)) {
            for layer in 1..=2 {
                let total: f64 = records.iter().filter(|r| r.layer == layer).map(|r| r.value).sum();
                prop_assert!((total - 1.0).abs() < 1e-5, "layer {} sums to {}", layer, total);
            }
        }
    }

    #[test]
    fn relative_targets_are_disjoint(seq in random_sequence(2, 2)) {
        let records = relative_position_attention(std::slice::from_ref(&seq)).unwrap();
        for layer in 1..=2 {
            for head in 1..=2 {
                let total: f64 = records
                    .iter()
                    .filter(|r| r.layer == layer && r.head.to_string() == head.to_string())
                    .map(|r| r.value)
                    .sum();
                prop_assert!(total <= 1.0 + 1e-5);
            }
        }
    }

    #[test]
    fn mass_values_lie_in_unit_interval(corpus in corpus()) {
        let special = special_token_attention(&corpus, &[Mode::Mass]).unwrap();
        let construct = construct_attention(&corpus, &[Mode::Mass]).unwrap();
        for r in special.iter().chain(&construct) {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&r.value) && r.n > 0);
        }
    }
}
