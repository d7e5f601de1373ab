//! Synthetic corpora, the JSON-lines corpus format, and padded batching.
//!
//! # Corpus file format
//!
//! UTF-8, one JSON object per line. The first line is a header echoing the
//! generator configuration:
//!
//! ```text
//! {"format":"ngram-corpus","version":1,"task":"salient","vocab_size":50,"source_len":20,"n_salient":3,"count":2,"seed":7}
//! {"source":[12,4,33,...],"target":[4,6,2]}
//! {"source":[...],"target":[...]}
//! ```
//!
//! Token ids 0, 1 and 2 are reserved for PAD, BOS and EOS. Every target ends
//! with EOS; neither side contains PAD or BOS. An empty file is a valid empty
//! corpus. Writing is deterministic, so writing a corpus read from a file
//! reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ngram::TokenId;
use crate::numeric::Rng;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
/// First id available to ordinary tokens.
pub const FIRST_TOKEN: TokenId = 3;

pub const FORMAT_NAME: &str = "ngram-corpus";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl Example {
    /// Target without its trailing EOS.
    pub fn target_tokens(&self) -> &[TokenId] {
        match self.target.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.target,
        }
    }
}

/// Which synthetic task to generate, with its shape parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    /// Target is the salient tokens of the source, in source order.
    Salient {
        vocab_size: usize,
        source_len: usize,
        n_salient: usize,
    },
    Copy { vocab_size: usize, len: usize },
    Reverse { vocab_size: usize, len: usize },
}

impl TaskConfig {
    pub fn vocab_size(&self) -> usize {
        match *self {
            TaskConfig::Salient { vocab_size, .. }
            | TaskConfig::Copy { vocab_size, .. }
            | TaskConfig::Reverse { vocab_size, .. } => vocab_size,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Salient { .. } => "salient",
            TaskConfig::Copy { .. } => "copy",
            TaskConfig::Reverse { .. } => "reverse",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskConfig::Salient {
                vocab_size,
                source_len,
                n_salient,
            } => {
                if source_len == 0 {
                    return Err(Error::invalid("source_len must be positive"));
                }
                if n_salient > source_len {
                    return Err(Error::invalid(format!(
                        "n_salient ({n_salient}) exceeds source_len ({source_len})"
                    )));
                }
                if vocab_size <= n_salient + 3 {
                    return Err(Error::invalid(format!(
                        "vocab_size ({vocab_size}) must exceed n_salient + 3 ({})",
                        n_salient + 3
                    )));
                }
            }
            TaskConfig::Copy { vocab_size, len } | TaskConfig::Reverse { vocab_size, len } => {
                if len == 0 {
                    return Err(Error::invalid("len must be positive"));
                }
                if vocab_size <= FIRST_TOKEN as usize {
                    return Err(Error::invalid(format!(
                        "vocab_size ({vocab_size}) leaves no room for ordinary tokens"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Size of the salient token range for the salient task.
    ///
    /// Kept small (two more than the number of salient slots) so that
    /// targets regularly repeat tokens and n-grams.
    pub fn salient_vocab(&self) -> Option<usize> {
        match *self {
            TaskConfig::Salient {
                vocab_size,
                n_salient,
                ..
            } => Some((n_salient + 2).min(vocab_size - 4).max(1)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    #[serde(flatten)]
    pub task: TaskConfig,
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    /// Absent only for an empty file.
    pub header: Option<CorpusHeader>,
    pub examples: Vec<Example>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn vocab_size(&self) -> Option<usize> {
        self.header.as_ref().map(|h| h.task.vocab_size())
    }

    pub fn max_source_len(&self) -> usize {
        self.examples.iter().map(|e| e.source.len()).max().unwrap_or(0)
    }

    pub fn max_target_len(&self) -> usize {
        self.examples.iter().map(|e| e.target.len()).max().unwrap_or(0)
    }
}

fn ordinary_token(rng: &mut Rng, lo: usize, hi: usize) -> TokenId {
    (lo + rng.below(hi - lo)) as TokenId
}

/// Generates `count` examples for `task` from `seed`.
pub fn generate(task: &TaskConfig, count: usize, seed: u64) -> Result<Corpus> {
    task.validate()?;
    let mut rng = Rng::new(seed);
    let examples = match *task {
        TaskConfig::Salient {
            vocab_size,
            source_len,
            n_salient,
        } => {
            let salient_hi = FIRST_TOKEN as usize + task.salient_vocab().expect("salient task");
            (0..count)
                .map(|_| salient_example(&mut rng, vocab_size, source_len, n_salient, salient_hi))
                .collect()
        }
        TaskConfig::Copy { vocab_size, len } | TaskConfig::Reverse { vocab_size, len } => {
            let reverse = matches!(task, TaskConfig::Reverse { .. });
            (0..count)
                .map(|_| {
                    let source: Vec<TokenId> = (0..len)
                        .map(|_| ordinary_token(&mut rng, FIRST_TOKEN as usize, vocab_size))
                        .collect();
                    let mut target = source.clone();
                    if reverse {
                        target.reverse();
                    }
                    target.push(EOS);
                    Example { source, target }
                })
                .collect()
        }
    };
    Ok(Corpus {
        header: Some(CorpusHeader {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            task: task.clone(),
            count,
            seed,
        }),
        examples,
    })
}

/// The source is split into `n_salient` contiguous segments and each segment
/// carries exactly one salient token at a random offset; every other position
/// is a filler token.
fn salient_example(
    rng: &mut Rng,
    vocab_size: usize,
    source_len: usize,
    n_salient: usize,
    salient_hi: usize,
) -> Example {
    let mut source: Vec<TokenId> = (0..source_len)
        .map(|_| ordinary_token(rng, salient_hi, vocab_size))
        .collect();
    let mut target = Vec::with_capacity(n_salient + 1);
    for seg in 0..n_salient {
        let lo = seg * source_len / n_salient;
        let hi = (seg + 1) * source_len / n_salient;
        let pos = lo + rng.below(hi - lo);
        let tok = ordinary_token(rng, FIRST_TOKEN as usize, salient_hi);
        source[pos] = tok;
        target.push(tok);
    }
    target.push(EOS);
    Example { source, target }
}

pub fn gen_salient_task(vocab_size: usize, source_len: usize, n_salient: usize, count: usize, seed: u64) -> Result<Corpus> {
    generate(
        &TaskConfig::Salient {
            vocab_size,
            source_len,
            n_salient,
        },
        count,
        seed,
    )
}

pub fn gen_copy_task(vocab_size: usize, len: usize, count: usize, seed: u64) -> Result<Corpus> {
    generate(&TaskConfig::Copy { vocab_size, len }, count, seed)
}

pub fn gen_reverse_task(vocab_size: usize, len: usize, count: usize, seed: u64) -> Result<Corpus> {
    generate(&TaskConfig::Reverse { vocab_size, len }, count, seed)
}

pub fn write_corpus_to<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    if let Some(h) = &corpus.header {
        serde_json::to_writer(&mut out, h).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    for ex in &corpus.examples {
        serde_json::to_writer(&mut out, ex).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    write_corpus_to(corpus, BufWriter::new(File::create(path)?))
}

pub fn read_corpus_from<R: BufRead>(input: R, path: &Path) -> Result<Corpus> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut header: Option<CorpusHeader> = None;
    let mut examples = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if i == 0 {
            let h: CorpusHeader =
                serde_json::from_str(&line).map_err(|e| parse_err(lineno, format!("bad header: {e}")))?;
            if h.format != FORMAT_NAME || h.version != FORMAT_VERSION {
                return Err(parse_err(
                    lineno,
                    format!("unsupported format {} v{}", h.format, h.version),
                ));
            }
            header = Some(h);
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let vocab = header.as_ref().map(|h| h.task.vocab_size()).unwrap_or(usize::MAX);
        if let Some(&bad) = ex.source.iter().chain(&ex.target).find(|&&t| t as usize >= vocab) {
            return Err(Error::Validation(format!(
                "{}:{lineno}: token {bad} outside vocabulary of size {vocab}",
                path.display()
            )));
        }
        examples.push(ex);
    }
    Ok(Corpus { header, examples })
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    read_corpus_from(BufReader::new(File::open(path)?), path)
}

/// A padded mini-batch. Rows are padded with PAD up to the batch maxima.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub sources: Vec<Vec<TokenId>>,
    pub targets: Vec<Vec<TokenId>>,
    pub source_lengths: Vec<usize>,
    pub target_lengths: Vec<usize>,
    /// Positions of these examples in the corpus.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn source(&self, i: usize) -> &[TokenId] {
        &self.sources[i][..self.source_lengths[i]]
    }

    pub fn target(&self, i: usize) -> &[TokenId] {
        &self.targets[i][..self.target_lengths[i]]
    }

    pub fn from_examples<'a>(examples: impl IntoIterator<Item = (usize, &'a Example)>) -> Batch {
        let items: Vec<(usize, &Example)> = examples.into_iter().collect();
        let src_w = items.iter().map(|(_, e)| e.source.len()).max().unwrap_or(0);
        let tgt_w = items.iter().map(|(_, e)| e.target.len()).max().unwrap_or(0);
        let pad = |seq: &[TokenId], w: usize| {
            let mut v = seq.to_vec();
            v.resize(w, PAD);
            v
        };
        Batch {
            sources: items.iter().map(|(_, e)| pad(&e.source, src_w)).collect(),
            targets: items.iter().map(|(_, e)| pad(&e.target, tgt_w)).collect(),
            source_lengths: items.iter().map(|(_, e)| e.source.len()).collect(),
            target_lengths: items.iter().map(|(_, e)| e.target.len()).collect(),
            indices: items.iter().map(|(i, _)| *i).collect(),
        }
    }
}

/// Shuffles example order with `shuffle_seed` and cuts it into batches of
/// `batch_size` (the last one may be smaller).
pub fn make_batches(corpus: &Corpus, batch_size: usize, shuffle_seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    Rng::new(shuffle_seed).shuffle(&mut order);
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch::from_examples(chunk.iter().map(|&i| (i, &corpus.examples[i]))))
        .collect())
}
