//! Clone detection over a frozen encoder: `[CLS]` states versus an
//! attention-weighted sum of identifier states, each fed to a logistic
//! head.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::encoder::{encode, pool, EncoderConfig, EncoderParams, ForwardOutput};
use crate::error::{Error, Result};
use crate::lexer::{lex, strip_comments, TokenType};
use crate::subtok::{aggregate_attention, aggregate_hidden, tokenize_pair, Encoding, UnitKind, Vocab};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClonePair {
    pub code_a: String,
    pub code_b: String,
    pub is_clone: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Cls,
    Idf,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Cls => "CLS",
            Source::Idf => "IDF",
        })
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cls" => Ok(Source::Cls),
            "idf" => Ok(Source::Idf),
            _ => Err(Error::Config(format!("unknown embedding source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerSpec {
    /// 1-based encoder layer.
    Layer(usize),
    /// The pooler transform over the final layer.
    Pooled,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Layer(l) => write!(f, "{l}"),
            LayerSpec::Pooled => f.write_str("pooled"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmbeddingSpec {
    pub source: Source,
    pub layer: LayerSpec,
}

/// Every layer followed by the pooled variant, for each requested source.
pub fn sweep_specs(sources: &[Source], num_layers: usize) -> Vec<EmbeddingSpec> {
    let mut specs = Vec::new();
    for &source in sources {
        for l in 1..=num_layers {
            specs.push(EmbeddingSpec {
                source,
                layer: LayerSpec::Layer(l),
            });
        }
        specs.push(EmbeddingSpec {
            source,
            layer: LayerSpec::Pooled,
        });
    }
    specs
}

fn check_layer(layer: LayerSpec, config: &EncoderConfig) -> Result<usize> {
    match layer {
        LayerSpec::Layer(l) if (1..=config.num_layers).contains(&l) => Ok(l),
        LayerSpec::Layer(l) => Err(Error::InvalidLayer {
            layer: l,
            num_layers: config.num_layers,
        }),
        LayerSpec::Pooled => Ok(config.num_layers),
    }
}

/// A framed pair and the lexical type of each kept token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairInput {
    pub encoding: Encoding,
    pub types: [Vec<TokenType>; 2],
}

impl PairInput {
    /// Word-level unit indices that are identifiers.
    pub fn identifier_units(&self) -> Vec<usize> {
        self.encoding
            .alignment
            .units()
            .iter()
            .enumerate()
            .filter_map(|(u, unit)| match unit.kind {
                UnitKind::Word { segment, token }
                    if self.types[segment as usize][token] == TokenType::Identifier =>
                {
                    Some(u)
                }
                _ => None,
            })
            .collect()
    }
}

/// `[CLS] A [SEP] B [SEP]` with segment ids 0/1.
pub fn build_pair_input(pair: &ClonePair, vocab: &Vocab, max_len: usize) -> Result<PairInput> {
    let a = lex(&strip_comments(&pair.code_a)?)?;
    let b = lex(&strip_comments(&pair.code_b)?)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("clone pair side has no tokens".into()));
    }
    let texts_a: Vec<&str> = a.iter().map(|t| t.text.as_str()).collect();
    let texts_b: Vec<&str> = b.iter().map(|t| t.text.as_str()).collect();
    Ok(PairInput {
        encoding: tokenize_pair(&texts_a, &texts_b, vocab, max_len),
        types: [
            a.iter().map(|t| t.kind).collect(),
            b.iter().map(|t| t.kind).collect(),
        ],
    })
}

/// Position-0 state of `layer`, or the pooled vector.
pub fn cls_embedding(
    out: &ForwardOutput,
    layer: LayerSpec,
    config: &EncoderConfig,
) -> Result<Array1<f64>> {
    let l = check_layer(layer, config)?;
    Ok(match layer {
        LayerSpec::Pooled => out.pooled.clone(),
        LayerSpec::Layer(_) => out.hidden_states[l].row(0).to_owned(),
    })
}

/// `a_i / Σ a_j`.
pub fn identifier_weights(received: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = received.iter().sum();
    if received.is_empty() || total <= 0.0 || !total.is_finite() {
        return Err(Error::Degenerate("identifier attention does not sum to a positive value".into()));
    }
    Ok(received.iter().map(|a| a / total).collect())
}

pub fn weighted_sum(weights: &[f64], vectors: &[ArrayView1<'_, f64>]) -> Array1<f64> {
    let dim = vectors.first().map_or(0, |v| v.len());
    let mut out = Array1::<f64>::zeros(dim);
    for (w, v) in weights.iter().zip(vectors) {
        out.scaled_add(*w, v);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Array1<f64>,
    /// No identifier was present and the `[CLS]` embedding was used.
    pub fallback: bool,
}

/// Identifier states of `layer` weighted by the word-level attention each
/// identifier receives (summed over source rows, averaged over heads).
pub fn idf_weighted_embedding(
    out: &ForwardOutput,
    input: &PairInput,
    layer: LayerSpec,
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<Embedding> {
    Ok(embed_all(out, input, &[EmbeddingSpec { source: Source::Idf, layer }], params, config)?
        .pop()
        .expect("one spec"))
}

/// Embeddings for several specs from one forward pass.
pub fn embed_all(
    out: &ForwardOutput,
    input: &PairInput,
    specs: &[EmbeddingSpec],
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<Vec<Embedding>> {
    let identifiers = input.identifier_units();
    let needs_idf = !identifiers.is_empty() && specs.iter().any(|s| s.source == Source::Idf);
    let words = if needs_idf {
        Some(aggregate_attention(&out.attention, &input.encoding.alignment)?)
    } else {
        None
    };
    specs
        .iter()
        .map(|spec| {
            let l = check_layer(spec.layer, config)?;
            let words = match (spec.source, &words) {
                (Source::Idf, Some(w)) => w,
                (Source::Idf, None) => {
                    return Ok(Embedding {
                        vector: cls_embedding(out, spec.layer, config)?,
                        fallback: true,
                    })
                }
                (Source::Cls, _) => {
                    return Ok(Embedding {
                        vector: cls_embedding(out, spec.layer, config)?,
                        fallback: false,
                    })
                }
            };
            let heads = words.num_heads();
            let received: Vec<f64> = identifiers
                .iter()
                .map(|&i| {
                    (0..heads)
                        .map(|h| words.head(l - 1, h).column(i).sum())
                        .sum::<f64>()
                        / heads as f64
                })
                .collect();
            let weights = identifier_weights(&received)?;
            let states = aggregate_hidden(out.hidden_states[l].view(), &input.encoding.alignment)?;
            let rows: Vec<ArrayView1<'_, f64>> = identifiers.iter().map(|&i| states.row(i)).collect();
            let sum = weighted_sum(&weights, &rows);
            let vector = match spec.layer {
                LayerSpec::Pooled => pool(sum.view(), params),
                LayerSpec::Layer(_) => sum,
            };
            Ok(Embedding {
                vector,
                fallback: false,
            })
        })
        .collect()
}

/// Standardized logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weights: Array1<f64>,
    pub bias: f64,
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl LinearHead {
    pub fn probability(&self, x: ArrayView1<'_, f64>) -> f64 {
        let z = ((&x - &self.mean) / &self.scale).dot(&self.weights) + self.bias;
        sigmoid(z)
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> bool {
        self.probability(x) >= 0.5
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            epochs: 3,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

/// Binary cross-entropy, per-example gradient steps over shuffled data.
pub fn train_head(features: &[Array1<f64>], labels: &[bool], config: &HeadConfig) -> Result<LinearHead> {
    if features.len() != labels.len() {
        return Err(Error::Shape("features and labels differ in length".into()));
    }
    if features.is_empty() {
        return Err(Error::Empty("clone training set".into()));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::Degenerate("training set has a single class".into()));
    }
    let dim = features[0].len();
    let n = features.len() as f64;
    let mean = features.iter().fold(Array1::<f64>::zeros(dim), |acc, f| acc + f) / n;
    let var = features
        .iter()
        .fold(Array1::<f64>::zeros(dim), |acc, f| acc + (f - &mean).mapv(|v| v * v))
        / n;
    let scale = var.mapv(|v| if v > 1e-12 { v.sqrt() } else { 1.0 });
    let standardized: Vec<Array1<f64>> = features.iter().map(|f| (f - &mean) / &scale).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 0.01).expect("valid std");
    let mut weights = Array1::from_shape_simple_fn(dim, || rng.sample(normal));
    let mut bias = 0.0;
    let mut order: Vec<usize> = (0..features.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &standardized[i];
            let p = sigmoid(x.dot(&weights) + bias);
            let g = p - f64::from(u8::from(labels[i]));
            weights.scaled_add(-config.learning_rate * g, x);
            bias -= config.learning_rate * g;
        }
    }
    Ok(LinearHead {
        weights,
        bias,
        mean,
        scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n: usize,
}

/// Precision, recall and F1 of the clone class; a zero denominator gives 0.
pub fn metrics(predicted: &[bool], gold: &[bool]) -> Result<Metrics> {
    if predicted.is_empty() {
        return Err(Error::Empty("clone test set".into()));
    }
    if predicted.len() != gold.len() {
        return Err(Error::Shape("predictions and labels differ in length".into()));
    }
    let count = |p: bool, g: bool| {
        predicted
            .iter()
            .zip(gold)
            .filter(|&(&a, &b)| a == p && b == g)
            .count() as f64
    };
    let (tp, fp, fn_) = (count(true, true), count(true, false), count(false, true));
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let precision = div(tp, tp + fp);
    let recall = div(tp, tp + fn_);
    Ok(Metrics {
        precision,
        recall,
        f1: div(2.0 * precision * recall, precision + recall),
        n: predicted.len(),
    })
}

pub fn evaluate(head: &LinearHead, features: &[Array1<f64>], labels: &[bool]) -> Result<Metrics> {
    let predicted: Vec<bool> = features.iter().map(|f| head.predict(f.view())).collect();
    metrics(&predicted, labels)
}

/// Embeds every pair under every spec. Returns `[spec][pair]` vectors and
/// the number of identifier fallbacks.
pub fn extract_features(
    pairs: &[ClonePair],
    specs: &[EmbeddingSpec],
    vocab: &Vocab,
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<(Vec<Vec<Array1<f64>>>, usize)> {
    let mut features = vec![Vec::with_capacity(pairs.len()); specs.len()];
    let mut fallbacks = 0;
    for pair in pairs {
        let input = build_pair_input(pair, vocab, config.max_seq_len)?;
        let out = encode(&input.encoding.ids, &input.encoding.segments, params, config)?;
        let embeddings = embed_all(&out, &input, specs, params, config)?;
        if embeddings.iter().any(|e| e.fallback) {
            fallbacks += 1;
        }
        for (f, e) in features.iter_mut().zip(embeddings) {
            f.push(e.vector);
        }
    }
    Ok((features, fallbacks))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloneResult {
    pub spec: EmbeddingSpec,
    pub metrics: Metrics,
}

/// Trains and evaluates one head per spec on frozen-encoder features.
pub fn sweep(
    train: &[ClonePair],
    test: &[ClonePair],
    specs: &[EmbeddingSpec],
    vocab: &Vocab,
    params: &EncoderParams,
    config: &EncoderConfig,
    head: &HeadConfig,
) -> Result<Vec<CloneResult>> {
    let (train_x, _) = extract_features(train, specs, vocab, params, config)?;
    let (test_x, fallbacks) = extract_features(test, specs, vocab, params, config)?;
    if fallbacks > 0 {
        log::warn!("{fallbacks} test pairs had no identifier; used [CLS] instead");
    }
    let train_y: Vec<bool> = train.iter().map(|p| p.is_clone).collect();
    let test_y: Vec<bool> = test.iter().map(|p| p.is_clone).collect();
    specs
        .iter()
        .zip(train_x.iter().zip(&test_x))
        .map(|(&spec, (tx, ex))| {
            let h = train_head(tx, &train_y, head)?;
            Ok(CloneResult {
                spec,
                metrics: evaluate(&h, ex, &test_y)?,
            })
        })
        .collect()
}

pub fn write_results_csv<W: Write>(mut out: W, results: &[CloneResult]) -> io::Result<()> {
    writeln!(out, "source,layer,precision,recall,f1,n")?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.spec.source,
            r.spec.layer,
            crate::csv::float(r.metrics.precision),
            crate::csv::float(r.metrics.recall),
            crate::csv::float(r.metrics.f1),
            r.metrics.n
        )?;
    }
    Ok(())
}

/// Replacement names for identifier renaming.
pub const RENAME_POOL: [&str; 12] = [
    "tmp", "val", "res", "cnt", "buf", "acc", "elem", "node", "key", "out", "ptr", "arg",
];

/// Renames every identifier consistently and re-spaces the tokens.
pub fn rename_and_perturb<R: Rng + ?Sized>(source: &str, rng: &mut R) -> Result<String> {
    let tokens = lex(&strip_comments(source)?)?;
    let mut pool: Vec<&str> = RENAME_POOL.to_vec();
    pool.shuffle(rng);
    let mut mapping: Vec<(String, String)> = Vec::new();
    let mut out = String::new();
    let mut line = 0;
    for (i, tok) in tokens.iter().enumerate() {
        let text = if tok.kind == TokenType::Identifier {
            match mapping.iter().find(|(from, _)| *from == tok.text) {
                Some((_, to)) => to.clone(),
                None => {
                    let k = mapping.len();
                    let base = pool[k % pool.len()];
                    let name = if k < pool.len() {
                        base.to_string()
                    } else {
                        format!("{base}{}", k / pool.len() + 1)
                    };
                    mapping.push((tok.text.clone(), name.clone()));
                    name
                }
            }
        } else {
            tok.text.clone()
        };
        if i > 0 {
            if tok.line != line {
                out.push('\n');
                let indent = rng.random_range(0..=8);
                out.extend(std::iter::repeat_n(' ', indent));
            } else {
                let spaces = rng.random_range(1..=3);
                out.extend(std::iter::repeat_n(' ', spaces));
            }
        }
        line = tok.line;
        out.push_str(&text);
    }
    Ok(out)
}

/// Balanced clone pairs: positives pair a function with a renamed,
/// re-spaced copy; negatives pair two distinct, unmodified functions.
pub fn make_synthetic_clone_set(functions: &[&str], seed: u64, size: usize) -> Result<Vec<ClonePair>> {
    if functions.len() < 2 {
        return Err(Error::Empty(format!(
            "need at least 2 functions for clone pairs, got {}",
            functions.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positives = size.div_ceil(2);
    let mut pairs = Vec::with_capacity(size);
    for i in 0..size {
        let a = rng.random_range(0..functions.len());
        if i < positives {
            pairs.push(ClonePair {
                code_a: functions[a].to_string(),
                code_b: rename_and_perturb(functions[a], &mut rng)?,
                is_clone: true,
            });
        } else {
            let mut b = rng.random_range(0..functions.len() - 1);
            if b >= a {
                b += 1;
            }
            pairs.push(ClonePair {
                code_a: functions[a].to_string(),
                code_b: functions[b].to_string(),
                is_clone: false,
            });
        }
    }
    pairs.shuffle(&mut rng);
    Ok(pairs)
}

fn escape(code: &str) -> String {
    let mut out = String::with_capacity(code.len());
    for c in code.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// One pair per line: `label TAB codeA TAB codeB`, label 1 for clones.
pub fn write_pairs<W: Write>(mut out: W, pairs: &[ClonePair]) -> io::Result<()> {
    for p in pairs {
        writeln!(
            out,
            "{}\t{}\t{}",
            u8::from(p.is_clone),
            escape(&p.code_a),
            escape(&p.code_b)
        )?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(input: R) -> Result<Vec<ClonePair>> {
    let mut pairs = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<pairs>", e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [label, a, b] = fields[..] else {
            return Err(Error::Config(format!("pair line {} has {} fields", n + 1, fields.len())));
        };
        let is_clone = match label {
            "1" => true,
            "0" => false,
            other => return Err(Error::Config(format!("pair line {}: bad label {other:?}", n + 1))),
        };
        pairs.push(ClonePair {
            code_a: unescape(a),
            code_b: unescape(b),
            is_clone,
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_file_round_trip() {
        let pairs = vec![
            ClonePair {
                code_a: "void f() {\n\tg(\"\\n\");\n}".into(),
                code_b: "int x;".into(),
                is_clone: true,
            },
            ClonePair {
                code_a: "a".into(),
                code_b: "b\\".into(),
                is_clone: false,
            },
        ];
        let mut buf = Vec::new();
        write_pairs(&mut buf, &pairs).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 2);
        assert_eq!(read_pairs(&buf[..]).unwrap(), pairs);
    }

    #[test]
    fn source_parses_case_insensitively() {
        assert_eq!("CLS".parse::<Source>().unwrap(), Source::Cls);
        assert_eq!("idf".parse::<Source>().unwrap(), Source::Idf);
        assert!("both".parse::<Source>().is_err());
    }

    #[test]
    fn metrics_zero_denominators() {
        let m = metrics(&[false, false], &[false, true]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }
}
