//! Corpus-level attention analyses over word-level attention tensors:
//! special-token attention, relative position, head redundancy, attention
//! per syntactic construct, and where identifiers attend.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use ndarray::Array2;

use crate::attention::AttentionTensor;
use crate::encoder::{encode, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::lexer::{Token, TokenType};
use crate::stats::{jensen_shannon, KahanSum};
use crate::subtok::{aggregate_attention, tokenize, UnitKind, Vocab};

/// The construct classes and their labels, in report order.
pub const CONSTRUCT_CLASSES: [(TokenType, &str); 6] = [
    (TokenType::Identifier, "IDF"),
    (TokenType::Separator, "SEPS"),
    (TokenType::Operator, "OP"),
    (TokenType::BasicType, "DTP"),
    (TokenType::Keyword, "KEY"),
    (TokenType::Modifier, "MOD"),
];

/// How attention toward a class is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Mean over source rows of the mass each row sends to the class.
    Mass,
    /// Total attention the class receives divided by its occurrence count.
    Occurrence,
}

impl Mode {
    pub const BOTH: [Mode; 2] = [Mode::Mass, Mode::Occurrence];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Mass => "mass",
            Mode::Occurrence => "occurrence",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mass" => Ok(Mode::Mass),
            "occurrence" => Ok(Mode::Occurrence),
            _ => Err(Error::Config(format!("unknown analysis mode {s:?}"))),
        }
    }
}

/// Word-level label used by the analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WordLabel {
    Cls,
    Sep,
    Token(TokenType),
}

impl WordLabel {
    pub fn is_special(self) -> bool {
        matches!(self, WordLabel::Cls | WordLabel::Sep)
    }
}

/// One analyzed sequence: word-level attention and a label per word.
#[derive(Debug, Clone, PartialEq)]
pub struct WordAttention {
    pub attention: AttentionTensor,
    pub labels: Vec<WordLabel>,
}

impl WordAttention {
    pub fn new(attention: AttentionTensor, labels: Vec<WordLabel>) -> Result<Self> {
        if labels.len() != attention.seq_len() {
            return Err(Error::Shape(format!(
                "{} labels for a sequence of {} words",
                labels.len(),
                attention.seq_len()
            )));
        }
        Ok(WordAttention { attention, labels })
    }

    fn positions(&self, label: WordLabel) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Encodes one lexed sequence framed as `[CLS] … [SEP]` and folds its
/// attention onto lexer tokens.
pub fn word_attention(
    tokens: &[Token],
    vocab: &Vocab,
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<WordAttention> {
    if tokens.is_empty() {
        return Err(Error::Empty("token sequence".into()));
    }
    let texts: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
    let enc = tokenize(&texts, vocab, config.max_seq_len);
    let out = encode(&enc.ids, &enc.segments, params, config)?;
    let attention = aggregate_attention(&out.attention, &enc.alignment)?;
    let labels = enc
        .alignment
        .units()
        .iter()
        .map(|u| match u.kind {
            UnitKind::Cls => WordLabel::Cls,
            UnitKind::Sep => WordLabel::Sep,
            UnitKind::Word { token, .. } => WordLabel::Token(tokens[token].kind),
        })
        .collect();
    WordAttention::new(attention, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Head {
    /// 1-based head index.
    Index(usize),
    All,
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Head::Index(h) => write!(f, "{h}"),
            Head::All => f.write_str("all"),
        }
    }
}

/// One row of an analysis table.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRecord {
    pub analysis: &'static str,
    /// 1-based.
    pub layer: usize,
    pub head: Head,
    pub class: String,
    pub mode: &'static str,
    pub value: f64,
    /// Number of samples averaged.
    pub n: usize,
}

pub fn write_records<W: Write>(mut out: W, records: &[AnalysisRecord]) -> io::Result<()> {
    writeln!(out, "analysis,layer,head,class,mode,value,n")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.analysis,
            r.layer,
            r.head,
            crate::csv::field(&r.class),
            r.mode,
            crate::csv::float(r.value),
            r.n
        )?;
    }
    Ok(())
}

type Key = (usize, Head, String, &'static str);

/// Ordered accumulation of compensated sums keyed by record identity.
#[derive(Default)]
struct Accumulator {
    sums: BTreeMap<Key, KahanSum>,
}

impl Accumulator {
    fn add(&mut self, layer: usize, head: Head, class: &str, mode: &'static str, value: f64) {
        self.sums
            .entry((layer, head, class.to_string(), mode))
            .or_default()
            .add(value);
    }

    fn into_records(self, analysis: &'static str, class_order: &[&str]) -> Vec<AnalysisRecord> {
        let rank = |c: &str| class_order.iter().position(|&o| o == c).unwrap_or(usize::MAX);
        let mut records: Vec<AnalysisRecord> = self
            .sums
            .into_iter()
            .filter(|(_, s)| s.count() > 0)
            .map(|((layer, head, class, mode), s)| AnalysisRecord {
                analysis,
                layer: layer + 1,
                head,
                mode,
                value: s.mean().expect("non-empty"),
                n: s.count(),
                class,
            })
            .collect();
        records.sort_by(|a, b| {
            (a.layer, a.head, rank(&a.class), a.mode).cmp(&(b.layer, b.head, rank(&b.class), b.mode))
        });
        records
    }
}

fn check_corpus(corpus: &[WordAttention]) -> Result<(usize, usize)> {
    let first = corpus.first().ok_or_else(|| Error::Empty("analysis corpus".into()))?;
    let dims = (first.attention.num_layers(), first.attention.num_heads());
    if let Some(bad) = corpus
        .iter()
        .find(|s| (s.attention.num_layers(), s.attention.num_heads()) != dims)
    {
        return Err(Error::Shape(format!(
            "mixed geometries in corpus: {}x{} and {}x{}",
            dims.0,
            dims.1,
            bad.attention.num_layers(),
            bad.attention.num_heads()
        )));
    }
    Ok(dims)
}

/// Attention received by `targets` from the rows in `sources`, in both
/// normalizations. `None` if there are no targets or no sources.
fn class_attention(
    att: &AttentionTensor,
    layer: usize,
    head: usize,
    sources: &[usize],
    targets: &[usize],
    mode: Mode,
) -> Option<f64> {
    if targets.is_empty() || sources.is_empty() {
        return None;
    }
    let m = att.head(layer, head);
    let mut total = KahanSum::new();
    for &i in sources {
        for &j in targets {
            total.add(m[[i, j]]);
        }
    }
    Some(match mode {
        Mode::Mass => total.sum() / sources.len() as f64,
        Mode::Occurrence => total.sum() / targets.len() as f64,
    })
}

/// Attention to `[CLS]` and `[SEP]` per layer and head. Every row is a
/// source; each sequence contributes one sample per class it contains.
pub fn special_token_attention(
    corpus: &[WordAttention],
    modes: &[Mode],
) -> Result<Vec<AnalysisRecord>> {
    let (layers, heads) = check_corpus(corpus)?;
    let mut acc = Accumulator::default();
    for seq in corpus {
        let sources: Vec<usize> = (0..seq.labels.len()).collect();
        for (label, name) in [(WordLabel::Cls, "CLS"), (WordLabel::Sep, "SEP")] {
            let targets = seq.positions(label);
            for l in 0..layers {
                for h in 0..heads {
                    for &mode in modes {
                        if let Some(v) = class_attention(&seq.attention, l, h, &sources, &targets, mode)
                        {
                            acc.add(l, Head::Index(h + 1), name, mode.as_str(), v);
                        }
                    }
                }
            }
        }
    }
    Ok(acc.into_records("special_token", &["CLS", "SEP"]))
}

/// Mean attention to the same word, the previous word and the next word,
/// pooled over all non-special source rows that have the neighbor.
pub fn relative_position_attention(corpus: &[WordAttention]) -> Result<Vec<AnalysisRecord>> {
    let (layers, heads) = check_corpus(corpus)?;
    let mut acc = Accumulator::default();
    let mut eligible = false;
    for seq in corpus {
        let n = seq.labels.len();
        if n < 2 {
            continue;
        }
        eligible = true;
        for l in 0..layers {
            for h in 0..heads {
                let m = seq.attention.head(l, h);
                for i in (0..n).filter(|&i| !seq.labels[i].is_special()) {
                    acc.add(l, Head::Index(h + 1), "self", "mass", m[[i, i]]);
                    if i > 0 {
                        acc.add(l, Head::Index(h + 1), "prev", "mass", m[[i, i - 1]]);
                    }
                    if i + 1 < n {
                        acc.add(l, Head::Index(h + 1), "next", "mass", m[[i, i + 1]]);
                    }
                }
            }
        }
    }
    if !eligible {
        return Err(Error::Empty("no sequence with at least two words".into()));
    }
    Ok(acc.into_records("relative_position", &["self", "prev", "next"]))
}

/// Pairwise mean Jensen–Shannon divergence (bits) between all heads,
/// flattened layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RedundancyMatrix {
    pub num_layers: usize,
    pub num_heads: usize,
    pub values: Array2<f64>,
}

impl RedundancyMatrix {
    pub fn label(&self, index: usize) -> String {
        format!("L{}H{}", index / self.num_heads + 1, index % self.num_heads + 1)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let size = self.values.nrows();
        let labels: Vec<String> = (0..size).map(|i| self.label(i)).collect();
        writeln!(out, ",{}", labels.join(","))?;
        for (i, row) in self.values.rows().into_iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|&v| crate::csv::float(v)).collect();
            writeln!(out, "{},{}", labels[i], cells.join(","))?;
        }
        Ok(())
    }
}

pub fn head_redundancy(corpus: &[WordAttention]) -> Result<RedundancyMatrix> {
    let (layers, heads) = check_corpus(corpus)?;
    let size = layers * heads;
    let mut sums: Vec<KahanSum> = vec![KahanSum::new(); size * size];
    for seq in corpus {
        let n = seq.labels.len();
        for i in 0..n {
            let rows: Vec<Vec<f64>> = (0..size)
                .map(|a| seq.attention.row(a / heads, a % heads, i).to_vec())
                .collect();
            for a in 0..size {
                for b in a + 1..size {
                    sums[a * size + b].add(jensen_shannon(&rows[a], &rows[b]));
                }
            }
        }
    }
    let mut values = Array2::<f64>::zeros((size, size));
    for a in 0..size {
        for b in a + 1..size {
            let v = sums[a * size + b].mean().unwrap_or(0.0);
            values[[a, b]] = v;
            values[[b, a]] = v;
        }
    }
    Ok(RedundancyMatrix {
        num_layers: layers,
        num_heads: heads,
        values,
    })
}

/// Per-head summary of a redundancy matrix: mean divergence to the other
/// heads of the same layer and to the heads of every other layer.
pub fn redundancy_records(matrix: &RedundancyMatrix) -> Vec<AnalysisRecord> {
    let (layers, heads) = (matrix.num_layers, matrix.num_heads);
    let size = layers * heads;
    let mut records = Vec::new();
    for a in 0..size {
        let (mut within, mut across) = (KahanSum::new(), KahanSum::new());
        for b in (0..size).filter(|&b| b != a) {
            if a / heads == b / heads {
                within.add(matrix.values[[a, b]]);
            } else {
                across.add(matrix.values[[a, b]]);
            }
        }
        for (class, s) in [("within_layer", within), ("across_layer", across)] {
            if let Some(value) = s.mean() {
                records.push(AnalysisRecord {
                    analysis: "head_redundancy",
                    layer: a / heads + 1,
                    head: Head::Index(a % heads + 1),
                    class: class.into(),
                    mode: "jsd",
                    value,
                    n: s.count(),
                });
            }
        }
    }
    records
}

/// Attention received by each construct class from non-special source
/// rows. A sequence without a class contributes no sample for it.
pub fn construct_attention(
    corpus: &[WordAttention],
    modes: &[Mode],
) -> Result<Vec<AnalysisRecord>> {
    let (layers, heads) = check_corpus(corpus)?;
    let mut acc = Accumulator::default();
    for seq in corpus {
        let sources: Vec<usize> = (0..seq.labels.len())
            .filter(|&i| !seq.labels[i].is_special())
            .collect();
        for (kind, name) in CONSTRUCT_CLASSES {
            let targets = seq.positions(WordLabel::Token(kind));
            for l in 0..layers {
                for h in 0..heads {
                    for &mode in modes {
                        if let Some(v) = class_attention(&seq.attention, l, h, &sources, &targets, mode)
                        {
                            acc.add(l, Head::Index(h + 1), name, mode.as_str(), v);
                        }
                    }
                }
            }
        }
    }
    let order: Vec<&str> = CONSTRUCT_CLASSES.iter().map(|(_, n)| *n).collect();
    Ok(acc.into_records("construct", &order))
}

/// Where identifiers attend: per layer, averaged over heads and pooled over
/// every identifier row, the mass sent to each construct class plus the
/// remainder (framing tokens and other token types).
pub fn identifier_relationship(corpus: &[WordAttention]) -> Result<Vec<AnalysisRecord>> {
    let (layers, heads) = check_corpus(corpus)?;
    let mut acc = Accumulator::default();
    let mut any = false;
    for seq in corpus {
        let rows = seq.positions(WordLabel::Token(TokenType::Identifier));
        any |= !rows.is_empty();
        for l in 0..layers {
            for &i in &rows {
                let mut masses = [KahanSum::new(); CONSTRUCT_CLASSES.len()];
                for h in 0..heads {
                    let row = seq.attention.row(l, h, i);
                    for (j, label) in seq.labels.iter().enumerate() {
                        if let Some(c) = CONSTRUCT_CLASSES
                            .iter()
                            .position(|(k, _)| *label == WordLabel::Token(*k))
                        {
                            masses[c].add(row[j]);
                        }
                    }
                }
                let mut covered = KahanSum::new();
                for (c, (_, name)) in CONSTRUCT_CLASSES.iter().enumerate() {
                    let mass = masses[c].sum() / heads as f64;
                    covered.add(mass);
                    acc.add(l, Head::All, name, "mass", mass);
                }
                acc.add(l, Head::All, "residual", "mass", (1.0 - covered.sum()).max(0.0));
            }
        }
    }
    if !any {
        return Err(Error::Empty("corpus contains no identifier".into()));
    }
    let mut order: Vec<&str> = CONSTRUCT_CLASSES.iter().map(|(_, n)| *n).collect();
    order.push("residual");
    Ok(acc.into_records("identifier_relationship", &order))
}

/// Everything `analyze` produces.
#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub special_token: Vec<AnalysisRecord>,
    pub relative_position: Vec<AnalysisRecord>,
    pub head_redundancy: Vec<AnalysisRecord>,
    pub construct: Vec<AnalysisRecord>,
    pub identifier_relationship: Vec<AnalysisRecord>,
    pub redundancy_matrix: RedundancyMatrix,
}

impl AnalysisReport {
    /// `(file stem, records)` for each analysis table.
    pub fn tables(&self) -> [(&'static str, &[AnalysisRecord]); 5] {
        [
            ("special_token", &self.special_token),
            ("relative_position", &self.relative_position),
            ("head_redundancy", &self.head_redundancy),
            ("construct", &self.construct),
            ("identifier_relationship", &self.identifier_relationship),
        ]
    }
}

pub fn run_all(corpus: &[WordAttention], modes: &[Mode]) -> Result<AnalysisReport> {
    let matrix = head_redundancy(corpus)?;
    Ok(AnalysisReport {
        special_token: special_token_attention(corpus, modes)?,
        relative_position: relative_position_attention(corpus)?,
        head_redundancy: redundancy_records(&matrix),
        construct: construct_attention(corpus, modes)?,
        identifier_relationship: identifier_relationship(corpus)?,
        redundancy_matrix: matrix,
    })
}
