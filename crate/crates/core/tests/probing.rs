use codeattn::corpus::{toy_documents, toy_prepared, words};
use codeattn::encoder::{EncoderConfig, EncoderParams};
use codeattn::lexer::{lex, TokenType};
use codeattn::probing::{classify_predicted, mask_by_type, probe_corpus, score, TypeConfusion};
use codeattn::subtok::{tokenize, train_vocab, Vocab, MASK_ID};

fn vocab() -> Vocab {
    train_vocab(words(&toy_documents()), 400).unwrap()
}

#[test]
fn masks_only_the_target_type() {
    let vocab = vocab();
    let tokens = lex("int x = 1;").unwrap();
    let plain = tokenize(&["int", "x", "=", "1", ";"], &vocab, 64);
    let masked = mask_by_type(&tokens, TokenType::Identifier, &vocab, 64);
    assert_eq!(masked.words, vec![1]);
    assert!(!masked.empty);
    assert_eq!(masked.ids.len(), plain.ids.len());
    for (i, (&m, &p)) in masked.ids.iter().zip(&plain.ids).enumerate() {
        if masked.ranges[0].contains(&i) {
            assert_eq!(m, MASK_ID);
        } else {
            assert_eq!(m, p, "position {i} changed");
        }
    }
}

#[test]
fn multi_piece_words_mask_every_piece() {
    let vocab = vocab();
    let tokens = lex("builderReverseCount = 1;").unwrap();
    let masked = mask_by_type(&tokens, TokenType::Identifier, &vocab, 64);
    assert!(masked.ranges[0].len() > 1);
    assert!(masked.ranges[0].clone().all(|i| masked.ids[i] == MASK_ID));
}

#[test]
fn absent_target_is_flagged_not_an_error() {
    let vocab = vocab();
    let tokens = lex("x = y;").unwrap();
    let masked = mask_by_type(&tokens, TokenType::Modifier, &vocab, 64);
    assert!(masked.empty);
    assert!(masked.words.is_empty());
    assert_eq!(masked.ids, tokenize(&["x", "=", "y", ";"], &vocab, 64).ids);
}

#[test]
fn standalone_classification_examples() {
    assert_eq!(classify_predicted("public"), TokenType::Modifier);
    assert_eq!(classify_predicted("continue"), TokenType::Keyword);
    assert_eq!(classify_predicted("foo123"), TokenType::Identifier);
    assert_eq!(classify_predicted("a b"), TokenType::Other);
}

#[test]
fn diagonal_confusion_scores_one() {
    let mut c = TypeConfusion::default();
    for t in TokenType::PROBED {
        c.add(t, t);
        c.add(t, t);
    }
    for s in score(&c).unwrap().per_type {
        assert_eq!((s.precision, s.recall, s.f1), (Some(1.0), Some(1.0), Some(1.0)));
    }
    assert!(score(&TypeConfusion::default()).is_err());
}

#[test]
fn probe_runs_cover_every_present_type() {
    let vocab = vocab();
    let config = EncoderConfig {
        num_layers: 1,
        num_heads: 2,
        hidden_dim: 16,
        ffn_dim: 32,
        max_seq_len: 128,
        vocab_size: vocab.len(),
        seed: 2,
    };
    let params = EncoderParams::init(&config).unwrap();
    let seqs: Vec<_> = toy_prepared().iter().take(3).map(|d| d.tokens()).collect();
    let (records, confusion) = probe_corpus(&seqs, &vocab, &params, &config).unwrap();
    for (s, tokens) in seqs.iter().enumerate() {
        for t in TokenType::PROBED {
            let expected = tokens.iter().filter(|k| k.kind == t).count();
            let got = records.iter().filter(|r| r.sequence == s && r.gold == t).count();
            assert_eq!(got, expected, "sequence {s} type {t:?}");
        }
    }
    assert_eq!(confusion, TypeConfusion::from_records(&records));
    for r in &records {
        assert_eq!(seqs[r.sequence][r.position].kind, r.gold);
    }
}
