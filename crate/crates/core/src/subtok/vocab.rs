use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const NUM_RESERVED: usize = RESERVED.len();

/// Prefix marking a piece that continues a word.
pub const CONTINUATION: &str = "##";

/// Bidirectional piece table. Ids 0..5 are the reserved special pieces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        for (id, reserved) in RESERVED.iter().enumerate() {
            if pieces.get(id).map(String::as_str) != Some(*reserved) {
                return Err(Error::Config(format!(
                    "vocabulary id {id} must be {reserved}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (id, piece) in pieces.iter().enumerate() {
            if piece.is_empty() || piece.contains('\n') {
                return Err(Error::Config(format!("invalid piece at id {id}")));
            }
            if index.insert(piece.clone(), id as u32).is_some() {
                return Err(Error::Config(format!("duplicate piece `{piece}`")));
            }
        }
        Ok(Vocab { pieces, index })
    }

    /// A vocabulary holding only the reserved pieces.
    pub fn reserved_only() -> Self {
        Self::from_pieces(RESERVED.iter().map(|s| s.to_string()).collect())
            .expect("reserved pieces are valid")
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_RESERVED
    }

    fn push(&mut self, piece: String) -> bool {
        if self.index.contains_key(&piece) {
            return false;
        }
        self.index.insert(piece.clone(), self.pieces.len() as u32);
        self.pieces.push(piece);
        true
    }

    /// Greedy longest-match segmentation of one word. A residue with no
    /// matching piece becomes a single `[UNK]`.
    pub fn wordpiece(&self, word: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        let mut start = 0;
        let mut candidate = String::with_capacity(word.len() + 2);
        while start < word.len() {
            let mut found = None;
            let boundaries: Vec<usize> = word[start..]
                .char_indices()
                .map(|(i, c)| start + i + c.len_utf8())
                .collect();
            for &end in boundaries.iter().rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.push_str(&word[start..end]);
                if let Some(id) = self.id(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    ids.push(id);
                    start = end;
                }
                None => {
                    ids.push(UNK_ID);
                    break;
                }
            }
        }
        ids
    }

    /// Joins pieces back into text, dropping continuation prefixes.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter_map(|&id| self.piece(id))
            .map(|p| p.strip_prefix(CONTINUATION).unwrap_or(p))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for piece in &self.pieces {
            writeln!(out, "{piece}")?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut pieces = Vec::new();
        for line in BufReader::new(input).lines() {
            let line = line.map_err(|e| Error::io("<vocab>", e))?;
            pieces.push(line);
        }
        Self::from_pieces(pieces)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}

/// Induces a subword vocabulary by frequency-ranked pair merging.
///
/// The initial alphabet holds every word-initial character and every
/// continuation character (`##c`). Merges then proceed most-frequent pair
/// first, ties broken by the lexicographic order of the pair, until the
/// vocabulary reaches `target_size` or every word is a single piece.
pub fn train_vocab<'a, I>(words: I, target_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in words {
        if !w.is_empty() {
            *counts.entry(w).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Empty("vocabulary corpus".into()));
    }
    let distinct_chars: std::collections::BTreeSet<char> =
        counts.keys().flat_map(|w| w.chars()).collect();
    let required = distinct_chars.len() + NUM_RESERVED;
    if target_size <= required {
        return Err(Error::VocabTooSmall {
            target: target_size,
            required,
        });
    }

    // Symbols are interned as indices into `symbols`.
    let mut symbols: Vec<String> = Vec::new();
    let mut symbol_ids: HashMap<String, u32> = HashMap::new();
    let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
        *symbol_ids.entry(s.clone()).or_insert_with(|| {
            symbols.push(s);
            (symbols.len() - 1) as u32
        })
    };

    let mut alphabet: BTreeMap<String, usize> = BTreeMap::new();
    let mut words: Vec<(Vec<u32>, usize)> = Vec::with_capacity(counts.len());
    for (word, &count) in &counts {
        let mut seq = Vec::new();
        for (i, c) in word.chars().enumerate() {
            let sym = if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION}{c}")
            };
            *alphabet.entry(sym.clone()).or_default() += count;
            seq.push(intern(sym, &mut symbols));
        }
        words.push((seq, count));
    }

    let mut vocab = Vocab::reserved_only();
    let mut ranked: Vec<(&String, &usize)> = alphabet.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let budget = target_size - NUM_RESERVED;
    if ranked.len() > budget {
        // Not every continuation form fits; rarest ones fall back to [UNK].
        for (sym, _) in ranked.into_iter().take(budget) {
            vocab.push(sym.clone());
        }
        return Ok(vocab);
    }
    for sym in alphabet.keys() {
        vocab.push(sym.clone());
    }

    while vocab.len() < target_size {
        let mut pairs: HashMap<(u32, u32), usize> = HashMap::new();
        for (seq, count) in &words {
            for w in seq.windows(2) {
                *pairs.entry((w[0], w[1])).or_default() += count;
            }
        }
        let best = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&symbols[pa.0 as usize], &symbols[pa.1 as usize]);
                let kb = (&symbols[pb.0 as usize], &symbols[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((left, right), _)) = best else {
            break;
        };
        let merged = {
            let r = &symbols[right as usize];
            format!(
                "{}{}",
                symbols[left as usize],
                r.strip_prefix(CONTINUATION).unwrap_or(r)
            )
        };
        let merged_id = intern(merged.clone(), &mut symbols);
        for (seq, _) in words.iter_mut() {
            if seq.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == left && seq[i + 1] == right {
                    out.push(merged_id);
                    i += 2;
                } else {
                    out.push(seq[i]);
                    i += 1;
                }
            }
            *seq = out;
        }
        vocab.push(merged);
    }
    Ok(vocab)
}
