use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use codeattn::analysis::{self, Mode, WordAttention};
use codeattn::clone::{self, ClonePair, HeadConfig, Source};
use codeattn::corpus::{read_prepared, toy_prepared, write_prepared, PreparedDocument};
use codeattn::encoder::checkpoint;
use codeattn::encoder::pretrain::write_metrics_csv;
use codeattn::encoder::{EncoderConfig, EncoderParams, Schedule};
use codeattn::lexer::Token;
use codeattn::probing;
use codeattn::subtok::{train_vocab, Vocab};

use crate::output::{header, write_atomic, write_csv};
use crate::settings::Settings;
use crate::{CommonArgs, EmbeddingArg, ModeArg};

const CORPUS_FILE: &str = "corpus.jsonl";
const VOCAB_FILE: &str = "vocab.txt";
const CHECKPOINT_FILE: &str = "checkpoint.bin";

fn java_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading corpus directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            java_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "java") {
            out.push(path);
        }
    }
    Ok(())
}

fn out_dir(settings: &mut Settings, args: &CommonArgs) -> PathBuf {
    settings
        .location("out", args.out.as_ref())
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn prepare(args: &CommonArgs) -> Result<()> {
    let mut s = Settings::new("prepare", args)?;
    let out = out_dir(&mut s, args);
    let seed = s.get("seed", args.seed, 0u64)?;
    let vocab_size = s.get("vocab_size", args.vocab_size, 8192usize)?;
    let docs = if args.toy {
        s.record("corpus", "toy");
        toy_prepared()
    } else {
        let dir = s.path("corpus", args.corpus.as_ref(), "directory of .java files")?;
        let mut files = Vec::new();
        java_files(&dir, &mut files)?;
        let mut docs = Vec::new();
        for path in files {
            let name = path.strip_prefix(&dir).unwrap_or(&path).display().to_string();
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            match PreparedDocument::from_source(name.clone(), &text) {
                Ok(doc) if doc.sentences.is_empty() => {
                    log::warn!("{name}: no code after removing comments; dropped")
                }
                Ok(doc) => docs.push(doc),
                Err(e) => log::warn!("{name}: {e}; dropped"),
            }
        }
        docs
    };
    ensure!(!docs.is_empty(), "no lexable .java files in the corpus");
    log::info!("{} documents; seed {seed}", docs.len());

    let words: Vec<&str> = docs
        .iter()
        .flat_map(|d| d.sentences.iter().flatten().map(|t| t.text.as_str()))
        .collect();
    let vocab = train_vocab(words, vocab_size)?;
    write_atomic(&out.join(CORPUS_FILE), |w| {
        write_prepared(w, &docs).map_err(std::io::Error::other)
    })?;
    write_atomic(&out.join(VOCAB_FILE), |w| vocab.write_to(w))?;
    let h = header(&s, &[]);
    write_csv(&out, "manifest.csv", &h, |w| {
        writeln!(w, "document,name,sentences,tokens")?;
        for (i, d) in docs.iter().enumerate() {
            let tokens: usize = d.sentences.iter().map(Vec::len).sum();
            writeln!(w, "{i},{},{},{tokens}", codeattn::csv::field(&d.name), d.sentences.len())?;
        }
        Ok(())
    })?;
    log::info!("vocabulary of {} pieces", vocab.len());
    Ok(())
}

fn load_corpus(s: &mut Settings, args: &CommonArgs) -> Result<(PathBuf, Vec<PreparedDocument>)> {
    let dir = s.path("corpus", args.corpus.as_ref(), "prepared corpus directory")?;
    let file = dir.join(CORPUS_FILE);
    ensure!(
        file.exists(),
        "prepared corpus not found at {}; run `codeattn prepare --corpus <java dir> --out {}` first",
        file.display(),
        dir.display()
    );
    let f = fs::File::open(&file).with_context(|| format!("opening {}", file.display()))?;
    let docs = read_prepared(BufReader::new(f))?;
    ensure!(!docs.is_empty(), "prepared corpus {} is empty", file.display());
    Ok((dir, docs))
}

fn load_vocab(s: &mut Settings, args: &CommonArgs, corpus_dir: Option<&Path>) -> Result<Vocab> {
    let path = match s.opt_path("vocab", args.vocab.as_ref()) {
        Some(p) => p,
        None => corpus_dir
            .map(|d| d.join(VOCAB_FILE))
            .context("missing --vocab (vocabulary file written by `codeattn prepare`)")?,
    };
    ensure!(
        path.exists(),
        "vocabulary not found at {}; run `codeattn prepare` first or pass --vocab",
        path.display()
    );
    Ok(Vocab::load(&path)?)
}

fn load_checkpoint(
    s: &mut Settings,
    args: &CommonArgs,
    out: &Path,
    vocab: &Vocab,
) -> Result<(EncoderParams, EncoderConfig)> {
    let path = s
        .opt_path("checkpoint", args.checkpoint.as_ref())
        .unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    ensure!(
        path.exists(),
        "checkpoint not found at {}; run `codeattn pretrain` first or pass --checkpoint",
        path.display()
    );
    let (params, config) = checkpoint::load(&path)?;
    for (name, flag, actual) in [
        ("layers", args.layers, config.num_layers),
        ("heads", args.heads, config.num_heads),
        ("hidden", args.hidden, config.hidden_dim),
    ] {
        if let Some(v) = flag {
            ensure!(v == actual, "--{name} {v} does not match the checkpoint ({actual})");
        }
    }
    ensure!(
        config.vocab_size == vocab.len(),
        "checkpoint expects {} vocabulary pieces but the vocabulary has {}",
        config.vocab_size,
        vocab.len()
    );
    s.record("model", format!("{:?}", config));
    s.record("checkpoint_checksum", params.checksum());
    Ok((params, config))
}

pub fn pretrain(args: &CommonArgs) -> Result<()> {
    let mut s = Settings::new("pretrain", args)?;
    let out = out_dir(&mut s, args);
    let (corpus_dir, docs) = load_corpus(&mut s, args)?;
    let vocab = load_vocab(&mut s, args, Some(&corpus_dir))?;
    let seed = s.get("seed", args.seed, 0u64)?;
    let hidden = s.get("hidden", args.hidden, 128usize)?;
    let config = EncoderConfig {
        num_layers: s.get("layers", args.layers, 4usize)?,
        num_heads: s.get("heads", args.heads, 4usize)?,
        hidden_dim: hidden,
        ffn_dim: s.get("ffn", None, 4 * hidden)?,
        max_seq_len: s.get("max_len", args.max_len, 256usize)?,
        vocab_size: vocab.len(),
        seed,
    };
    config.validate()?;
    let defaults = Schedule::default();
    let schedule = Schedule {
        epochs: s.get("epochs", args.epochs, defaults.epochs)?,
        learning_rate: s.get("lr", args.lr, defaults.learning_rate)?,
        batch_size: s.get("batch_size", args.batch_size, defaults.batch_size)?,
        seed,
        ..defaults
    };
    let documents: Vec<_> = docs.iter().map(PreparedDocument::document).collect();
    let result = codeattn::encoder::pretrain(&documents, &vocab, &config, &schedule)?;
    let ckpt = s
        .opt_path("checkpoint", args.checkpoint.as_ref())
        .unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let bytes = checkpoint::to_bytes(&result.params, &config)?;
    write_atomic(&ckpt, |w| w.write_all(&bytes))?;
    log::info!("wrote {}", ckpt.display());
    let h = header(&s, &[]);
    write_csv(&out, "metrics.csv", &h, |w| write_metrics_csv(w, &result.log))?;
    Ok(())
}

fn sequences(docs: &[PreparedDocument]) -> Vec<Vec<Token>> {
    docs.iter()
        .map(PreparedDocument::tokens)
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn analyze(args: &CommonArgs) -> Result<()> {
    let mut s = Settings::new("analyze", args)?;
    let out = out_dir(&mut s, args);
    let (corpus_dir, docs) = load_corpus(&mut s, args)?;
    let vocab = load_vocab(&mut s, args, Some(&corpus_dir))?;
    let (params, config) = load_checkpoint(&mut s, args, &out, &vocab)?;
    s.get("seed", args.seed, 0u64)?;
    let modes: Vec<Mode> = match s.get("mode", args.mode.map(mode_name), "both".to_string())?.as_str() {
        "mass" => vec![Mode::Mass],
        "occurrence" => vec![Mode::Occurrence],
        "both" => Mode::BOTH.to_vec(),
        other => bail!("unknown mode {other:?}; expected mass, occurrence or both"),
    };
    let corpus: Vec<WordAttention> = sequences(&docs)
        .iter()
        .map(|t| analysis::word_attention(t, &vocab, &params, &config))
        .collect::<codeattn::Result<_>>()?;
    let report = analysis::run_all(&corpus, &modes)?;
    let h = header(&s, &[]);
    for (stem, records) in report.tables() {
        write_csv(&out, &format!("{stem}.csv"), &h, |w| analysis::write_records(w, records))?;
    }
    write_csv(&out, "redundancy_matrix.csv", &h, |w| report.redundancy_matrix.write_csv(w))?;
    Ok(())
}

fn mode_name(m: ModeArg) -> String {
    match m {
        ModeArg::Mass => "mass",
        ModeArg::Occurrence => "occurrence",
        ModeArg::Both => "both",
    }
    .to_string()
}

pub fn probe(args: &CommonArgs) -> Result<()> {
    let mut s = Settings::new("probe", args)?;
    let out = out_dir(&mut s, args);
    let (corpus_dir, docs) = load_corpus(&mut s, args)?;
    let vocab = load_vocab(&mut s, args, Some(&corpus_dir))?;
    let (params, config) = load_checkpoint(&mut s, args, &out, &vocab)?;
    s.get("seed", args.seed, 0u64)?;
    let (records, confusion) = probing::probe_corpus(&sequences(&docs), &vocab, &params, &config)?;
    let scores = probing::score(&confusion)?;
    log::info!(
        "micro precision {:.4}, micro recall {:.4}",
        scores.micro_precision,
        scores.micro_recall
    );
    let h = header(&s, &[("fp_accounting", "cross-run")]);
    write_csv(&out, "probe_results.csv", &h, |w| probing::write_results_csv(w, &scores))?;
    write_csv(&out, "probe_raw.csv", &h, |w| probing::write_raw_csv(w, &records))?;
    Ok(())
}

/// Fraction of pairs used to train the clone head; the rest are held out.
const TRAIN_FRACTION: f64 = 0.7;

pub fn clone(args: &CommonArgs) -> Result<()> {
    let mut s = Settings::new("clone", args)?;
    let out = out_dir(&mut s, args);
    let seed = s.get("seed", args.seed, 0u64)?;
    let corpus = s.opt_path("corpus", args.corpus.as_ref());
    let docs = match &corpus {
        Some(_) => Some(load_corpus(&mut s, args)?),
        None => None,
    };
    let vocab = load_vocab(&mut s, args, docs.as_ref().map(|(d, _)| d.as_path()))?;
    let (params, config) = load_checkpoint(&mut s, args, &out, &vocab)?;
    let sources = match s
        .get("embedding", args.embedding.map(embedding_name), "both".to_string())?
        .as_str()
    {
        "cls" => vec![Source::Cls],
        "idf" => vec![Source::Idf],
        "both" => vec![Source::Cls, Source::Idf],
        other => bail!("unknown embedding {other:?}; expected cls, idf or both"),
    };

    let pairs: Vec<ClonePair> = match s.opt_path("pairs", args.pairs.as_ref()) {
        Some(path) => {
            let f = fs::File::open(&path)
                .with_context(|| format!("opening clone pairs {}", path.display()))?;
            clone::read_pairs(BufReader::new(f))?
        }
        None => {
            let (_, docs) = docs
                .as_ref()
                .context("need --pairs or a prepared --corpus to synthesize clone pairs")?;
            let size = s.get("size", args.size, 600usize)?;
            let functions: Vec<&str> = docs.iter().map(|d| d.source.as_str()).collect();
            let pairs = clone::make_synthetic_clone_set(&functions, seed, size)?;
            write_atomic(&out.join("pairs.tsv"), |w| clone::write_pairs(w, &pairs))?;
            pairs
        }
    };
    let split = ((pairs.len() as f64) * TRAIN_FRACTION).round() as usize;
    ensure!(split > 0 && split < pairs.len(), "need at least 2 clone pairs");
    let (train, test) = pairs.split_at(split);
    let specs = clone::sweep_specs(&sources, config.num_layers);
    let head = HeadConfig {
        seed,
        ..HeadConfig::default()
    };
    let before = params.checksum();
    let results = clone::sweep(train, test, &specs, &vocab, &params, &config, &head)?;
    ensure!(params.checksum() == before, "encoder parameters changed during head training");
    let h = header(&s, &[]);
    write_csv(&out, "clone_results.csv", &h, |w| clone::write_results_csv(w, &results))?;
    Ok(())
}

fn embedding_name(e: EmbeddingArg) -> String {
    match e {
        EmbeddingArg::Cls => "cls",
        EmbeddingArg::Idf => "idf",
        EmbeddingArg::Both => "both",
    }
    .to_string()
}
