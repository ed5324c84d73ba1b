//! Corpus ingestion: tokenizing, vocabulary, padding to a fixed length,
//! pretrained vectors, train/validation/test splits, and the synthetic
//! keyword corpus used for desk-scale runs.
//!
//! Dataset files hold one document per line, `label<TAB>text`, with integer
//! labels starting at 0.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{random_embeddings, PAD_ID};
use crate::error::{Result, SrnnError};
use crate::tensor::{Matrix, SeededRng};

pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_VOCAB_CAP: usize = 30_000;

/// Lowercases, splits on whitespace, trims ASCII punctuation from both ends
/// of each token and drops tokens left empty.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    freqs: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_parts(words: Vec<String>, freqs: Vec<u64>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary {
            words,
            freqs,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn frequency(&self, id: usize) -> u64 {
        self.freqs.get(id).copied().unwrap_or(0)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t).unwrap_or(UNK_ID)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.word(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// Writes `id<TAB>word<TAB>frequency` lines.
    pub fn write_tsv(&self, w: &mut impl Write) -> Result<()> {
        for (i, (word, f)) in self.words.iter().zip(&self.freqs).enumerate() {
            writeln!(w, "{i}\t{word}\t{f}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(SrnnError::file(path))?);
        self.write_tsv(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path).map_err(SrnnError::file(path))?);
        let mut words = Vec::new();
        let mut freqs = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let parse_err = |msg: String| SrnnError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let id: usize = fields[0].parse().map_err(|e| parse_err(format!("bad id: {e}")))?;
            if id != words.len() {
                return Err(parse_err(format!("ids must be dense, expected {} got {id}", words.len())));
            }
            let f: u64 = fields[2].parse().map_err(|e| parse_err(format!("bad frequency: {e}")))?;
            words.push(fields[1].to_string());
            freqs.push(f);
        }
        if words.len() < 2 || words[PAD_ID] != PAD_TOKEN || words[UNK_ID] != UNK_TOKEN {
            return Err(SrnnError::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"),
            });
        }
        Ok(Vocabulary::from_parts(words, freqs))
    }
}

/// Keeps the `cap` most frequent words (ties broken lexicographically) and
/// assigns them ids from 2 in rank order after the padding and unknown ids.
pub fn build_vocab<D: AsRef<[String]>>(train_docs: &[D], cap: usize) -> Vocabulary {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in train_docs {
        for tok in doc.as_ref() {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(cap);
    let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    let mut freqs = vec![0, 0];
    for (w, f) in ranked {
        words.push(w.to_string());
        freqs.push(f);
    }
    Vocabulary::from_parts(words, freqs)
}

/// Ids of the first `seq_len` tokens, padded with zeros at the end.
pub fn encode_pad(tokens: &[String], vocab: &Vocabulary, seq_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = tokens
        .iter()
        .take(seq_len)
        .map(|t| vocab.id(t).unwrap_or(UNK_ID))
        .collect();
    ids.resize(seq_len, PAD_ID);
    ids
}

/// Embedding table for `vocab`: rows found in the whitespace-separated
/// vector file are copied, other rows are drawn uniform in `±0.05`, and the
/// padding row is zero.
pub fn load_word_vectors(path: &Path, vocab: &Vocabulary, dim: usize, rng: &mut SeededRng) -> Result<Matrix> {
    let mut embed = random_embeddings(vocab.len(), dim, rng);
    let reader = BufReader::new(fs::File::open(path).map_err(SrnnError::file(path))?);
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<f64> = fields
            .map(|s| {
                s.parse::<f64>().map_err(|e| SrnnError::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    msg: format!("bad value {s:?} for {word:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(SrnnError::dim(
                "load_word_vectors",
                format!("embedding dim {dim}"),
                format!("{} values for {word:?} on line {}", values.len(), n + 1),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SrnnError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: format!("non-finite value for {word:?}"),
            });
        }
        if let Some(id) = vocab.id(word) {
            if id != PAD_ID && id != UNK_ID {
                embed.row_mut(id).copy_from_slice(&values);
            }
        }
    }
    Ok(embed)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub label: usize,
    pub text: String,
}

pub fn parse_tsv(content: &str, origin: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (n, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| SrnnError::Parse {
            path: origin.to_path_buf(),
            line: n + 1,
            msg,
        };
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| err("expected label<TAB>text".into()))?;
        let label = label
            .trim()
            .parse::<usize>()
            .map_err(|e| err(format!("bad label {label:?}: {e}")))?;
        docs.push(Document {
            label,
            text: text.to_string(),
        });
    }
    Ok(docs)
}

pub fn read_tsv(path: &Path) -> Result<Vec<Document>> {
    let content = fs::read_to_string(path).map_err(SrnnError::file(path))?;
    parse_tsv(&content, path)
}

pub fn write_tsv(path: &Path, docs: &[Document]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(SrnnError::file(path))?);
    for d in docs {
        if d.text.contains(['\t', '\n']) {
            return Err(SrnnError::Argument(format!(
                "document text may not contain tabs or newlines: {:?}",
                d.text
            )));
        }
        writeln!(f, "{}\t{}", d.label, d.text)?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub label: usize,
    pub ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    pub classes: usize,
    pub seq_len: usize,
}

/// Split sizes for `n` documents: validation and test get `⌊n/10⌋` each,
/// training gets the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let tenth = n / 10;
    (n - 2 * tenth, tenth, tenth)
}

/// Shuffles with `seed`, then cuts train / validation / test in that order.
pub fn split_documents<T: Clone>(docs: &[T], seed: u64) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let (tr, va, _) = split_sizes(docs.len());
    let pick = |r: &[usize]| r.iter().map(|&i| docs[i].clone()).collect::<Vec<T>>();
    (pick(&order[..tr]), pick(&order[tr..tr + va]), pick(&order[tr + va..]))
}

/// Tokenizes, splits, builds the vocabulary from the training split only,
/// and encodes every split to length `seq_len`.
pub fn build_corpus(docs: &[Document], seq_len: usize, vocab_cap: usize, seed: u64) -> Result<(Corpus, Vocabulary)> {
    if docs.is_empty() {
        return Err(SrnnError::Argument("empty dataset".into()));
    }
    if seq_len == 0 {
        return Err(SrnnError::Argument("T must be ≥ 1".into()));
    }
    let (train, val, test) = split_documents(docs, seed);
    let tokenized = |ds: &[Document]| ds.iter().map(|d| (d.label, tokenize(&d.text))).collect::<Vec<_>>();
    let (train, val, test) = (tokenized(&train), tokenized(&val), tokenized(&test));
    let train_tokens: Vec<&[String]> = train.iter().map(|(_, t)| t.as_slice()).collect();
    let vocab = build_vocab(&train_tokens, vocab_cap);
    let encode = |ds: &[(usize, Vec<String>)]| {
        ds.iter()
            .map(|(label, toks)| Example {
                label: *label,
                ids: encode_pad(toks, &vocab, seq_len),
            })
            .collect::<Vec<_>>()
    };
    let classes = docs.iter().map(|d| d.label).max().unwrap_or(0) + 1;
    let corpus = Corpus {
        train: encode(&train),
        val: encode(&val),
        test: encode(&test),
        classes: classes.max(2),
        seq_len,
    };
    Ok((corpus, vocab))
}

/// Encodes documents with an existing vocabulary, e.g. for evaluation.
pub fn encode_documents(docs: &[Document], vocab: &Vocabulary, seq_len: usize) -> Vec<Example> {
    docs.iter()
        .map(|d| Example {
            label: d.label,
            ids: encode_pad(&tokenize(&d.text), vocab, seq_len),
        })
        .collect()
}

const POSITIVE: [&str; 8] = [
    "great", "excellent", "delicious", "friendly", "amazing", "wonderful", "perfect", "fantastic",
];
const NEGATIVE: [&str; 8] = [
    "terrible", "awful", "rude", "disgusting", "horrible", "bland", "dirty", "worst",
];
const FILLER: [&str; 40] = [
    "the", "a", "we", "ordered", "food", "service", "table", "waiter", "menu", "place", "was",
    "and", "it", "our", "dinner", "lunch", "came", "with", "price", "room", "staff", "night",
    "again", "visit", "dish", "sauce", "chicken", "pizza", "coffee", "drinks", "to", "of", "for",
    "this", "they", "there", "time", "order", "some", "very",
];

/// Keywords that signal class `c` in the synthetic corpus.
pub fn toy_keywords(c: usize) -> Vec<String> {
    match c {
        0 => NEGATIVE.iter().map(|s| s.to_string()).collect(),
        1 => POSITIVE.iter().map(|s| s.to_string()).collect(),
        _ => (0..8).map(|i| format!("topic{c}x{i}")).collect(),
    }
}

/// Synthetic reviews of between `T/4` and `T` tokens. Each document plants
/// two or three keywords of its own class and, a quarter of the time, one
/// keyword of another class, at random positions among filler words. Counting
/// keywords per class therefore always recovers the label.
pub fn toy_documents(seed: u64, docs: usize, seq_len: usize, classes: usize) -> Result<Vec<Document>> {
    if docs < 10 {
        return Err(SrnnError::Argument(format!("toy corpus needs ≥ 10 documents, got {docs}")));
    }
    if classes < 2 {
        return Err(SrnnError::Argument(format!("toy corpus needs ≥ 2 classes, got {classes}")));
    }
    if seq_len < 4 {
        return Err(SrnnError::Argument(format!("toy corpus needs T ≥ 4, got {seq_len}")));
    }
    let keywords: Vec<Vec<String>> = (0..classes).map(toy_keywords).collect();
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::with_capacity(docs);
    for _ in 0..docs {
        let label = rng.below(classes);
        let own = 2 + rng.below(2);
        let other = if rng.next_f64() < 0.25 { 1 } else { 0 };
        let lo = (seq_len / 4).max(own + other);
        let len = lo + rng.below(seq_len - lo + 1);
        let mut words: Vec<String> = (0..len).map(|_| FILLER[rng.below(FILLER.len())].to_string()).collect();
        let mut slots: Vec<usize> = (0..len).collect();
        rng.shuffle(&mut slots);
        for &slot in &slots[..own] {
            words[slot] = keywords[label][rng.below(8)].clone();
        }
        if other == 1 {
            let c = (label + 1 + rng.below(classes - 1)) % classes;
            words[slots[own]] = keywords[c][rng.below(8)].clone();
        }
        out.push(Document {
            label,
            text: words.join(" "),
        });
    }
    Ok(out)
}

/// Seeded synthetic corpus, split 80/10/10 and encoded to length `seq_len`.
pub fn make_toy_corpus(seed: u64, docs: usize, seq_len: usize, classes: usize) -> Result<(Corpus, Vocabulary)> {
    let documents = toy_documents(seed, docs, seq_len, classes)?;
    build_corpus(&documents, seq_len, DEFAULT_VOCAB_CAP, seed)
}
