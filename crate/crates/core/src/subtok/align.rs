use std::ops::Range;

use ndarray::{Array2, Array4, ArrayView2};

use super::vocab::{Vocab, CLS_ID, SEP_ID};
use crate::attention::AttentionTensor;
use crate::error::{Error, Result};

/// What a word-level unit stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitKind {
    Cls,
    Sep,
    /// A lexer token: `segment` is 0 for the first sentence and 1 for the
    /// second, `token` indexes that sentence's token list.
    Word { segment: u8, token: usize },
}

impl UnitKind {
    pub fn is_special(self) -> bool {
        !matches!(self, UnitKind::Word { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unit {
    pub kind: UnitKind,
    pub range: Range<usize>,
}

/// Maps every subtoken position to the word-level unit covering it.
/// Units are contiguous, ordered and together cover the whole sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMap {
    units: Vec<Unit>,
}

impl AlignmentMap {
    pub fn new(units: Vec<Unit>) -> Result<Self> {
        let mut next = 0;
        for u in &units {
            if u.range.start != next || u.range.end <= u.range.start {
                return Err(Error::Shape(format!(
                    "alignment units must be contiguous and non-empty, got {:?} after {next}",
                    u.range
                )));
            }
            next = u.range.end;
        }
        Ok(AlignmentMap { units })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn subtoken_count(&self) -> usize {
        self.units.last().map_or(0, |u| u.range.end)
    }

    /// Subtoken range of lexer token `token` in `segment`, if it was kept.
    pub fn word_range(&self, segment: u8, token: usize) -> Option<Range<usize>> {
        self.units
            .iter()
            .find(|u| u.kind == UnitKind::Word { segment, token })
            .map(|u| u.range.clone())
    }

    pub fn is_identity(&self) -> bool {
        self.units.iter().all(|u| u.range.len() == 1)
    }

    /// Per subtoken position: whether it is a framing token.
    pub fn special_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.subtoken_count()];
        for u in &self.units {
            if u.kind.is_special() {
                mask[u.range.clone()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }
}

/// Framed subtoken sequence with its alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    pub alignment: AlignmentMap,
    /// Whole lexer tokens were dropped to fit `max_len`.
    pub truncated: bool,
}

fn push_unit(ids: &mut Vec<u32>, units: &mut Vec<Unit>, pieces: &[u32], kind: UnitKind) {
    let start = ids.len();
    ids.extend_from_slice(pieces);
    units.push(Unit {
        kind,
        range: start..ids.len(),
    });
}

/// `[CLS] w1 ... wk [SEP]`. Trailing whole tokens are dropped when the
/// sequence would exceed `max_len`.
pub fn tokenize<S: AsRef<str>>(words: &[S], vocab: &Vocab, max_len: usize) -> Encoding {
    assert!(max_len >= 2, "max_len must leave room for [CLS] and [SEP]");
    let pieces: Vec<Vec<u32>> = words.iter().map(|w| vocab.wordpiece(w.as_ref())).collect();
    let mut budget = max_len - 2;
    let mut kept = 0;
    for p in &pieces {
        if p.len() > budget {
            break;
        }
        budget -= p.len();
        kept += 1;
    }
    let mut ids = Vec::new();
    let mut units = Vec::new();
    push_unit(&mut ids, &mut units, &[CLS_ID], UnitKind::Cls);
    for (token, p) in pieces.iter().take(kept).enumerate() {
        push_unit(&mut ids, &mut units, p, UnitKind::Word { segment: 0, token });
    }
    push_unit(&mut ids, &mut units, &[SEP_ID], UnitKind::Sep);
    let segments = vec![0; ids.len()];
    Encoding {
        ids,
        segments,
        alignment: AlignmentMap::new(units).expect("built contiguously"),
        truncated: kept < pieces.len(),
    }
}

/// `[CLS] A [SEP] B [SEP]` with segment ids 0 for `[CLS] A [SEP]` and 1 for
/// `B [SEP]`. When too long, trailing whole tokens are dropped from
/// whichever side currently has more subtokens.
pub fn tokenize_pair<S: AsRef<str>, T: AsRef<str>>(
    first: &[S],
    second: &[T],
    vocab: &Vocab,
    max_len: usize,
) -> Encoding {
    assert!(max_len >= 3, "max_len must leave room for the pair framing");
    let a: Vec<Vec<u32>> = first.iter().map(|w| vocab.wordpiece(w.as_ref())).collect();
    let b: Vec<Vec<u32>> = second.iter().map(|w| vocab.wordpiece(w.as_ref())).collect();
    let (mut ka, mut kb) = (a.len(), b.len());
    let mut la: usize = a.iter().map(Vec::len).sum();
    let mut lb: usize = b.iter().map(Vec::len).sum();
    while la + lb + 3 > max_len {
        if la >= lb && ka > 0 {
            ka -= 1;
            la -= a[ka].len();
        } else if kb > 0 {
            kb -= 1;
            lb -= b[kb].len();
        } else {
            ka -= 1;
            la -= a[ka].len();
        }
    }
    let mut ids = Vec::new();
    let mut units = Vec::new();
    push_unit(&mut ids, &mut units, &[CLS_ID], UnitKind::Cls);
    for (token, p) in a.iter().take(ka).enumerate() {
        push_unit(&mut ids, &mut units, p, UnitKind::Word { segment: 0, token });
    }
    push_unit(&mut ids, &mut units, &[SEP_ID], UnitKind::Sep);
    let boundary = ids.len();
    for (token, p) in b.iter().take(kb).enumerate() {
        push_unit(&mut ids, &mut units, p, UnitKind::Word { segment: 1, token });
    }
    push_unit(&mut ids, &mut units, &[SEP_ID], UnitKind::Sep);
    let segments = (0..ids.len()).map(|i| u8::from(i >= boundary)).collect();
    Encoding {
        ids,
        segments,
        alignment: AlignmentMap::new(units).expect("built contiguously"),
        truncated: ka < a.len() || kb < b.len(),
    }
}

/// Folds subtoken attention onto word-level units: attention *to* a unit is
/// the sum over its subtoken columns, attention *from* a unit is the mean of
/// its subtoken rows, taken after the column sums.
pub fn aggregate_attention(att: &AttentionTensor, map: &AlignmentMap) -> Result<AttentionTensor> {
    let n = att.seq_len();
    if n != map.subtoken_count() {
        return Err(Error::Shape(format!(
            "attention covers {n} subtokens but alignment covers {}",
            map.subtoken_count()
        )));
    }
    let (layers, heads) = (att.num_layers(), att.num_heads());
    let m = map.num_units();
    let mut out = Array4::<f64>::zeros((layers, heads, m, m));
    let mut columns = Array2::<f64>::zeros((n, m));
    for l in 0..layers {
        for h in 0..heads {
            let head = att.head(l, h);
            for i in 0..n {
                for (v, unit) in map.units().iter().enumerate() {
                    columns[[i, v]] = unit.range.clone().map(|j| head[[i, j]]).sum();
                }
            }
            for (u, unit) in map.units().iter().enumerate() {
                let width = unit.range.len() as f64;
                for v in 0..m {
                    let total: f64 = unit.range.clone().map(|i| columns[[i, v]]).sum();
                    out[[l, h, u, v]] = total / width;
                }
            }
        }
    }
    AttentionTensor::new(out)
}

/// Mean of each unit's subtoken rows of a `[n, d]` hidden-state matrix.
pub fn aggregate_hidden(hidden: ArrayView2<'_, f64>, map: &AlignmentMap) -> Result<Array2<f64>> {
    if hidden.nrows() != map.subtoken_count() {
        return Err(Error::Shape(format!(
            "hidden states cover {} positions but alignment covers {}",
            hidden.nrows(),
            map.subtoken_count()
        )));
    }
    let mut out = Array2::<f64>::zeros((map.num_units(), hidden.ncols()));
    for (u, unit) in map.units().iter().enumerate() {
        let mut row = out.row_mut(u);
        for i in unit.range.clone() {
            row += &hidden.row(i);
        }
        row /= unit.range.len() as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subtok::{train_vocab, RESERVED};
    use ndarray::array;

    fn vocab(extra: &[&str]) -> Vocab {
        let mut pieces: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        pieces.extend(extra.iter().map(|s| s.to_string()));
        Vocab::from_pieces(pieces).unwrap()
    }

    #[test]
    fn splits_camel_case_word() {
        let v = vocab(&["get", "##Value", "g", "##e", "##t"]);
        let enc = tokenize(&["getValue"], &v, 16);
        assert_eq!(enc.ids, vec![CLS_ID, 5, 6, SEP_ID]);
        assert_eq!(enc.alignment.word_range(0, 0), Some(1..3));
    }

    #[test]
    fn whole_words_align_one_to_one() {
        let v = vocab(&["int", "x", ";"]);
        let enc = tokenize(&["int", "x", ";"], &v, 16);
        assert!(enc.alignment.is_identity());
        assert_eq!(enc.alignment.num_units(), 5);
        assert!(!enc.truncated);
    }

    #[test]
    fn truncation_keeps_framing() {
        let v = vocab(&["a", "b"]);
        let words = vec!["a"; 20];
        let enc = tokenize(&words, &v, 8);
        assert_eq!(enc.ids.len(), 8);
        assert_eq!(*enc.ids.last().unwrap(), SEP_ID);
        assert!(enc.truncated);
    }

    #[test]
    fn truncation_never_splits_a_word() {
        let v = vocab(&["a", "##b"]);
        // each "ab" is two pieces; budget of 5 fits two words, not two and a half
        let enc = tokenize(&["ab", "ab", "ab"], &v, 7);
        assert_eq!(enc.ids.len(), 6);
        assert_eq!(enc.alignment.num_units(), 4);
    }

    #[test]
    fn pair_framing_and_segments() {
        let v = vocab(&["a", "b"]);
        let enc = tokenize_pair(&["a"], &["b"], &v, 16);
        assert_eq!(enc.ids, vec![CLS_ID, 5, SEP_ID, 6, SEP_ID]);
        assert_eq!(enc.segments, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn pair_truncation_trims_longer_side() {
        let v = vocab(&["a", "b"]);
        let a = vec!["a"; 10];
        let b = vec!["b"; 3];
        let enc = tokenize_pair(&a, &b, &v, 10);
        assert_eq!(enc.ids.len(), 10);
        assert_eq!(*enc.ids.last().unwrap(), SEP_ID);
        let second = enc.segments.iter().filter(|&&s| s == 1).count();
        assert_eq!(second, 4, "all three b tokens plus [SEP] kept");
    }

    #[test]
    fn column_sum_then_row_mean() {
        let att = AttentionTensor::new(
            array![[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.2, 0.2, 0.6]]
                .into_shape_with_order((1, 1, 3, 3))
                .unwrap(),
        )
        .unwrap();
        let map = AlignmentMap::new(vec![
            Unit {
                kind: UnitKind::Word { segment: 0, token: 0 },
                range: 0..1,
            },
            Unit {
                kind: UnitKind::Word { segment: 0, token: 1 },
                range: 1..3,
            },
        ])
        .unwrap();
        let words = aggregate_attention(&att, &map).unwrap();
        let expected = [[0.5, 0.5], [0.15, 0.85]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((words.get(0, 0, i, j) - expected[i][j]).abs() < 1e-12);
            }
        }
        assert!(words.max_stochastic_error() < 1e-12);
    }

    #[test]
    fn split_word_receives_column_sum() {
        let att = AttentionTensor::new(
            array![[0.8, 0.1, 0.1], [0.2, 0.4, 0.4], [0.0, 0.5, 0.5]]
                .into_shape_with_order((1, 1, 3, 3))
                .unwrap(),
        )
        .unwrap();
        let map = AlignmentMap::new(vec![
            Unit {
                kind: UnitKind::Cls,
                range: 0..1,
            },
            Unit {
                kind: UnitKind::Word { segment: 0, token: 0 },
                range: 1..3,
            },
        ])
        .unwrap();
        let words = aggregate_attention(&att, &map).unwrap();
        assert!((words.get(0, 0, 0, 1) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn no_splits_is_identity() {
        let v = train_vocab(["int", "x"], 40).unwrap();
        let enc = tokenize(&["int", "x"], &v, 16);
        let values = Array4::from_shape_fn((2, 2, 4, 4), |(l, h, i, j)| {
            ((l + 2 * h + 3 * i + j) % 5 + 1) as f64
        });
        let mut values = values;
        for l in 0..2 {
            for h in 0..2 {
                for i in 0..4 {
                    let s: f64 = (0..4).map(|j| values[[l, h, i, j]]).sum();
                    (0..4).for_each(|j| values[[l, h, i, j]] /= s);
                }
            }
        }
        let att = AttentionTensor::new(values).unwrap();
        assert_eq!(aggregate_attention(&att, &enc.alignment).unwrap(), att);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let att = AttentionTensor::new(Array4::from_elem((1, 1, 2, 2), 0.5)).unwrap();
        let map = AlignmentMap::new(vec![Unit {
            kind: UnitKind::Cls,
            range: 0..3,
        }])
        .unwrap();
        assert!(aggregate_attention(&att, &map).is_err());
    }

    #[test]
    fn hidden_states_average_per_unit() {
        let hidden = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let map = AlignmentMap::new(vec![
            Unit {
                kind: UnitKind::Cls,
                range: 0..1,
            },
            Unit {
                kind: UnitKind::Word { segment: 0, token: 0 },
                range: 1..3,
            },
        ])
        .unwrap();
        let words = aggregate_hidden(hidden.view(), &map).unwrap();
        assert_eq!(words, array![[1.0, 0.0], [0.5, 1.0]]);
    }
}
