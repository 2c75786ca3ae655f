//! Pretrains the default desk-scale encoder on the built-in toy corpus and
//! prints the metrics log and held-in accuracies.

use std::time::Instant;

use codeattn::corpus::{toy_documents, words};
use codeattn::encoder::pretrain::{evaluate_held_in, write_metrics_csv};
use codeattn::encoder::{pretrain, EncoderConfig, Optimizer, Schedule};
use codeattn::subtok::train_vocab;

fn main() -> codeattn::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).map_or(30, |a| a.parse().unwrap());
    let lr = args.get(2).map_or(1e-3, |a| a.parse().unwrap());
    let adam = args.get(3).is_none_or(|a| a == "adam");
    let docs = toy_documents();
    let vocab = train_vocab(words(&docs), 1000)?;
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        max_seq_len: 128,
        ..EncoderConfig::default()
    };
    let schedule = Schedule {
        epochs,
        learning_rate: lr,
        optimizer: if adam { Optimizer::adam() } else { Optimizer::Sgd },
        ..Schedule::default()
    };
    let start = Instant::now();
    let out = pretrain(&docs, &vocab, &config, &schedule)?;
    write_metrics_csv(std::io::stdout(), &out.log).unwrap();
    let (mlm, nsp) = evaluate_held_in(&out, &config, &schedule)?;
    println!("pairs {} vocab {} held-in mlm {mlm:.4} nsp {nsp:.4} in {:?}", out.pairs.len(), vocab.len(), start.elapsed());
    Ok(())
}
