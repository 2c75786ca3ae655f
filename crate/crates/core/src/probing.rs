//! Non-parametric syntactic probing: mask every token of one syntactic
//! type, let the MLM head fill the gaps, and score the lexical type of what
//! it predicts.

use std::io::{self, Write};
use std::ops::Range;

use crate::encoder::{encode, predict_from, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::lexer::{lex, Token, TokenType};
use crate::subtok::{tokenize, Vocab, CONTINUATION, MASK_ID};

/// Column index of the catch-all class in a [`TypeConfusion`].
pub const OTHER_INDEX: usize = TokenType::PROBED.len();
pub const NUM_CLASSES: usize = OTHER_INDEX + 1;

/// Row/column index of `kind`: its slot among the probed types, or the
/// catch-all column.
pub fn class_index(kind: TokenType) -> usize {
    TokenType::PROBED
        .iter()
        .position(|&k| k == kind)
        .unwrap_or(OTHER_INDEX)
}

pub fn class_name(index: usize) -> &'static str {
    TokenType::PROBED
        .get(index)
        .map_or("other", |k| k.as_str())
}

/// A sequence with every token of one type masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedInput {
    pub ids: Vec<u32>,
    /// Indices into the token list of the masked words.
    pub words: Vec<usize>,
    /// Subtoken range of each masked word.
    pub ranges: Vec<Range<usize>>,
    /// The target type does not occur (within the kept tokens).
    pub empty: bool,
}

pub fn mask_by_type(
    tokens: &[Token],
    target: TokenType,
    vocab: &Vocab,
    max_len: usize,
) -> MaskedInput {
    let texts: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
    let enc = tokenize(&texts, vocab, max_len);
    let mut ids = enc.ids;
    let mut words = Vec::new();
    let mut ranges = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        if tok.kind != target {
            continue;
        }
        if let Some(range) = enc.alignment.word_range(0, i) {
            ids[range.clone()].iter_mut().for_each(|id| *id = MASK_ID);
            words.push(i);
            ranges.push(range);
        }
    }
    MaskedInput {
        ids,
        empty: words.is_empty(),
        words,
        ranges,
    }
}

/// Lexical type of a standalone predicted string: the type of its only
/// token, or `Other` when it does not lex to exactly one token.
pub fn classify_predicted(text: &str) -> TokenType {
    match lex(text) {
        Ok(tokens) if tokens.len() == 1 => tokens[0].kind,
        _ => TokenType::Other,
    }
}

/// Joins predicted pieces into one word, dropping continuation prefixes.
pub fn join_pieces<'a>(pieces: impl IntoIterator<Item = &'a str>) -> String {
    pieces
        .into_iter()
        .map(|p| p.strip_prefix(CONTINUATION).unwrap_or(p))
        .collect()
}

/// One masked word and what the model made of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeRecord {
    pub sequence: usize,
    /// Index into the sequence's token list.
    pub position: usize,
    pub gold: TokenType,
    pub predicted_text: String,
    pub predicted_type: TokenType,
}

/// Counts indexed `[gold][predicted]` over the probed types plus `Other`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeConfusion {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl TypeConfusion {
    pub fn add(&mut self, gold: TokenType, predicted: TokenType) {
        self.counts[class_index(gold)][class_index(predicted)] += 1;
    }

    pub fn from_records(records: &[ProbeRecord]) -> Self {
        let mut c = TypeConfusion::default();
        for r in records {
            c.add(r.gold, r.predicted_type);
        }
        c
    }

    pub fn merge(&mut self, other: &TypeConfusion) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (v, o) in row.iter_mut().zip(orow) {
                *v += o;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Precision/recall/F1 for one type; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeScore {
    pub kind: TokenType,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Masked positions of this type.
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeScores {
    pub per_type: Vec<TypeScore>,
    /// Micro averages over every column, `Other` included.
    pub micro_precision: f64,
    pub micro_recall: f64,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

/// Scores the probed types. FP for a type counts its predictions in every
/// other type's run.
pub fn score(confusion: &TypeConfusion) -> Result<ProbeScores> {
    if confusion.total() == 0 {
        return Err(Error::Empty("confusion matrix has no counts".into()));
    }
    let c = &confusion.counts;
    let col_sum = |t: usize| -> u64 { c.iter().map(|row| row[t]).sum() };
    let per_type = TokenType::PROBED
        .iter()
        .enumerate()
        .map(|(t, &kind)| {
            let tp = c[t][t] as f64;
            let row: u64 = c[t].iter().sum();
            let precision = ratio(tp, col_sum(t) as f64);
            let recall = ratio(tp, row as f64);
            let f1 = match (precision, recall) {
                (Some(p), Some(r)) => ratio(2.0 * p * r, p + r),
                _ => None,
            };
            TypeScore {
                kind,
                precision,
                recall,
                f1,
                n: row,
            }
        })
        .collect();
    let tp: u64 = (0..NUM_CLASSES).map(|t| c[t][t]).sum();
    let predicted: u64 = (0..NUM_CLASSES).map(col_sum).sum();
    let gold: u64 = c.iter().flatten().sum();
    Ok(ProbeScores {
        per_type,
        micro_precision: tp as f64 / predicted as f64,
        micro_recall: tp as f64 / gold as f64,
    })
}

/// Runs all seven probes over every sequence.
pub fn probe_corpus(
    sequences: &[Vec<Token>],
    vocab: &Vocab,
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<(Vec<ProbeRecord>, TypeConfusion)> {
    let mut records = Vec::new();
    for (s, tokens) in sequences.iter().enumerate() {
        for target in TokenType::PROBED {
            let masked = mask_by_type(tokens, target, vocab, config.max_seq_len);
            if masked.empty {
                continue;
            }
            let positions: Vec<usize> = masked.ranges.iter().flat_map(|r| r.clone()).collect();
            let out = encode(&masked.ids, &vec![0; masked.ids.len()], params, config)?;
            let predicted = predict_from(&out, &positions, params)?;
            let mut cursor = 0;
            for (&word, range) in masked.words.iter().zip(&masked.ranges) {
                let ids = &predicted[cursor..cursor + range.len()];
                cursor += range.len();
                let text = join_pieces(ids.iter().map(|&id| vocab.piece(id).unwrap_or("")));
                records.push(ProbeRecord {
                    sequence: s,
                    position: word,
                    gold: target,
                    predicted_type: classify_predicted(&text),
                    predicted_text: text,
                });
            }
        }
    }
    let confusion = TypeConfusion::from_records(&records);
    Ok((records, confusion))
}

fn optional(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), crate::csv::float)
}

pub fn write_results_csv<W: Write>(mut out: W, scores: &ProbeScores) -> io::Result<()> {
    writeln!(out, "type,precision,recall,f1,n")?;
    for s in &scores.per_type {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.kind,
            optional(s.precision),
            optional(s.recall),
            optional(s.f1),
            s.n
        )?;
    }
    Ok(())
}

pub fn write_raw_csv<W: Write>(mut out: W, records: &[ProbeRecord]) -> io::Result<()> {
    writeln!(out, "sequence,position,gold,predicted_text,predicted_type")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.sequence,
            r.position,
            r.gold,
            crate::csv::quote(&r.predicted_text),
            r.predicted_type
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies_standalone_words() {
        assert_eq!(classify_predicted("public"), TokenType::Modifier);
        assert_eq!(classify_predicted("continue"), TokenType::Keyword);
        assert_eq!(classify_predicted("foo123"), TokenType::Identifier);
        assert_eq!(classify_predicted("int"), TokenType::BasicType);
        assert_eq!(classify_predicted("42"), TokenType::DecimalInteger);
        assert_eq!(classify_predicted(";"), TokenType::Separator);
        assert_eq!(classify_predicted("+="), TokenType::Operator);
        assert_eq!(classify_predicted("a b"), TokenType::Other);
        assert_eq!(classify_predicted("[MASK]"), TokenType::Other);
        assert_eq!(class_index(classify_predicted("\"s\"")), OTHER_INDEX);
    }

    #[test]
    fn joins_continuations() {
        assert_eq!(join_pieces(["get", "##Value"]), "getValue");
    }

    #[test]
    fn undefined_scores_are_none() {
        let mut c = TypeConfusion::default();
        c.add(TokenType::Identifier, TokenType::Other);
        let s = score(&c).unwrap();
        let idf = &s.per_type[class_index(TokenType::Identifier)];
        assert_eq!(idf.precision, None);
        assert_eq!(idf.recall, Some(0.0));
        assert_eq!(idf.f1, None);
        assert_eq!(s.per_type[class_index(TokenType::Keyword)].recall, None);
        assert!(score(&TypeConfusion::default()).is_err());
    }
}
