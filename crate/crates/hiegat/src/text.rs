//! Corpus ingestion: tokenization, sentence segmentation, vocabulary.
//!
//! The canonical corpus layout is two aligned UTF-8 files: a metadata file
//! with one `doc_id<TAB>split<TAB>label` record per line, and a text file
//! with the corresponding document per line. The vocabulary is built from
//! the train split only; tokens seen only in test map to [`UNK_TOKEN`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HiegatError, Result};

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_ID: u32 = 0;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One labeled sample with its token and sentence segmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub split: Split,
    pub label_id: usize,
    pub tokens: Vec<u32>,
    /// Half-open `(start, end)` ranges partitioning `0..tokens.len()`.
    pub sentence_spans: Vec<(usize, usize)>,
    /// Whitespace token count of the raw line; the length statistic the
    /// benchmark tables report.
    pub surface_len: usize,
}

impl DocumentRecord {
    pub fn sentence_count(&self) -> usize {
        self.sentence_spans.len()
    }
}

/// Token/id bijection with a reserved UNK slot at id 0.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Id for a token, falling back to UNK.
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

/// Corpus-level statistics, matching what benchmark tables report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub docs: usize,
    pub train_docs: usize,
    pub test_docs: usize,
    pub vocab_size: usize,
    pub num_classes: usize,
    /// Mean whitespace token count per document.
    pub avg_doc_len: f64,
    /// Mean count of model tokens (post-cleaning) per document.
    pub avg_model_tokens: f64,
    pub avg_sentences: f64,
    pub dropped_docs: usize,
}

impl CorpusStats {
    /// Flat key-value text block.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "docs = {}", self.docs);
        let _ = writeln!(s, "train_docs = {}", self.train_docs);
        let _ = writeln!(s, "test_docs = {}", self.test_docs);
        let _ = writeln!(s, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "avg_doc_len = {:.4}", self.avg_doc_len);
        let _ = writeln!(s, "avg_model_tokens = {:.4}", self.avg_model_tokens);
        let _ = writeln!(s, "avg_sentences = {:.4}", self.avg_sentences);
        let _ = writeln!(s, "dropped_docs = {}", self.dropped_docs);
        s
    }
}

/// Sentence segmentation rule.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum SentenceMode {
    /// Split on terminal punctuation `. ! ? ;`.
    Punct,
    /// Fixed windows of this many tokens, for punctuation-stripped corpora.
    Chunk(usize),
}

pub const DEFAULT_CHUNK_SIZE: usize = 12;

/// An ingested corpus: records, vocabulary, label names and statistics.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub records: Vec<DocumentRecord>,
    pub vocab: Vocabulary,
    pub labels: Vec<String>,
    pub stats: CorpusStats,
}

impl Corpus {
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Lowercases, strips punctuation from token edges, drops empty tokens.
/// Internal punctuation (hyphens, apostrophes) is kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| c.is_ascii_punctuation());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// Splits text into sentence strings.
///
/// `Punct` splits on `. ! ? ;`, keeping non-empty segments and returning
/// the whole text when no split point exists. `Chunk(n)` windows the
/// whitespace tokens into groups of `n`, last group of at least one.
pub fn split_sentences(text: &str, mode: SentenceMode) -> Vec<String> {
    match mode {
        SentenceMode::Punct => {
            let mut sentences = Vec::new();
            let mut current = String::new();
            for ch in text.chars() {
                if matches!(ch, '.' | '!' | '?' | ';') {
                    if !current.trim().is_empty() {
                        sentences.push(current.trim().to_string());
                    }
                    current.clear();
                } else {
                    current.push(ch);
                }
            }
            if !current.trim().is_empty() {
                sentences.push(current.trim().to_string());
            }
            if sentences.is_empty() && !text.trim().is_empty() {
                // punctuation-only text: fall back to the whole line
                sentences.push(text.trim().to_string());
            }
            sentences
        }
        SentenceMode::Chunk(size) => {
            let size = size.max(1);
            let words: Vec<&str> = text.split_whitespace().collect();
            words.chunks(size).map(|c| c.join(" ")).collect()
        }
    }
}

fn parse_meta_line(path: &str, line_no: usize, line: &str) -> Result<(String, Split, String)> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(HiegatError::Format {
            path: path.to_string(),
            line: line_no,
            message: format!("expected 3 tab-separated fields, got {}", fields.len()),
        });
    }
    // the public benchmark layouts also spell these "training" and
    // "20news-bydate-train"/"-test"
    let split = match fields[1] {
        "train" | "training" => Split::Train,
        "test" => Split::Test,
        s if s.ends_with("-train") => Split::Train,
        s if s.ends_with("-test") => Split::Test,
        other => {
            return Err(HiegatError::Format {
                path: path.to_string(),
                line: line_no,
                message: format!("unknown split '{other}' (expected train or test)"),
            })
        }
    };
    Ok((fields[0].to_string(), split, fields[2].to_string()))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let content = fs::read_to_string(path)?;
    Ok(content
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect())
}

/// Ingests a two-file corpus. Tokenizes and sentence-splits every document,
/// builds the vocabulary from the train split, and computes statistics.
/// Documents that tokenize to nothing are dropped (with a logged warning).
pub fn ingest_corpus(meta_path: &Path, text_path: &Path, mode: SentenceMode) -> Result<Corpus> {
    let meta_name = meta_path.display().to_string();
    let text_name = text_path.display().to_string();
    let meta_lines = read_lines(meta_path)?;
    let text_lines = read_lines(text_path)?;

    if meta_lines.is_empty() {
        return Err(HiegatError::Format {
            path: meta_name,
            line: 0,
            message: "empty metadata file".into(),
        });
    }
    if text_lines.is_empty() {
        return Err(HiegatError::Format {
            path: text_name,
            line: 0,
            message: "empty corpus file".into(),
        });
    }
    if meta_lines.len() != text_lines.len() {
        return Err(HiegatError::Format {
            path: text_name,
            line: 0,
            message: format!(
                "line count mismatch: {} metadata records vs {} corpus lines",
                meta_lines.len(),
                text_lines.len()
            ),
        });
    }

    let mut meta = Vec::with_capacity(meta_lines.len());
    for (i, line) in meta_lines.iter().enumerate() {
        meta.push(parse_meta_line(&meta_name, i + 1, line)?);
    }

    // Deterministic label ids: sorted unique label names.
    let mut labels: Vec<String> = meta.iter().map(|(_, _, l)| l.clone()).collect();
    labels.sort();
    labels.dedup();
    let label_ids: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    // Tokenize and segment everything first, dropping empty documents.
    struct Raw {
        doc_id: String,
        split: Split,
        label_id: usize,
        sentences: Vec<Vec<String>>,
        surface_len: usize,
    }
    let mut raws = Vec::with_capacity(meta.len());
    let mut dropped = 0usize;
    for ((doc_id, split, label), line) in meta.into_iter().zip(&text_lines) {
        let sentences: Vec<Vec<String>> = split_sentences(line, mode)
            .iter()
            .map(|s| tokenize(s))
            .filter(|toks| !toks.is_empty())
            .collect();
        if sentences.is_empty() {
            log::warn!("dropping document {doc_id}: empty after cleaning");
            dropped += 1;
            continue;
        }
        raws.push(Raw {
            doc_id,
            split,
            label_id: label_ids[label.as_str()],
            sentences,
            surface_len: line.split_whitespace().count(),
        });
    }
    if raws.is_empty() {
        return Err(HiegatError::Format {
            path: text_name,
            line: 0,
            message: "all documents empty after cleaning".into(),
        });
    }

    // Vocabulary over the whole corpus in first-appearance order (train
    // docs first), matching how this model family sizes its embedding
    // tables; rows for test-only words never receive gradients. UNK stays
    // reserved for tokens outside the ingested corpus entirely.
    let mut id_to_token = vec![UNK_TOKEN.to_string()];
    let mut token_to_id: HashMap<String, u32> = HashMap::new();
    token_to_id.insert(UNK_TOKEN.to_string(), UNK_ID);
    let splits = [Split::Train, Split::Test];
    for split in splits {
        for raw in raws.iter().filter(|r| r.split == split) {
            for sent in &raw.sentences {
                for tok in sent {
                    if !token_to_id.contains_key(tok) {
                        token_to_id.insert(tok.clone(), id_to_token.len() as u32);
                        id_to_token.push(tok.clone());
                    }
                }
            }
        }
    }
    let vocab = Vocabulary::from_tokens(id_to_token);

    let mut records = Vec::with_capacity(raws.len());
    for raw in raws {
        let mut tokens = Vec::new();
        let mut spans = Vec::new();
        for sent in &raw.sentences {
            let start = tokens.len();
            tokens.extend(sent.iter().map(|t| vocab.id(t)));
            spans.push((start, tokens.len()));
        }
        records.push(DocumentRecord {
            doc_id: raw.doc_id,
            split: raw.split,
            label_id: raw.label_id,
            tokens,
            sentence_spans: spans,
            surface_len: raw.surface_len,
        });
    }

    let train_docs = records.iter().filter(|r| r.split == Split::Train).count();
    let docs = records.len();
    let stats = CorpusStats {
        docs,
        train_docs,
        test_docs: docs - train_docs,
        vocab_size: vocab.size(),
        num_classes: labels.len(),
        avg_doc_len: records.iter().map(|r| r.surface_len as f64).sum::<f64>() / docs as f64,
        avg_model_tokens: records.iter().map(|r| r.tokens.len() as f64).sum::<f64>() / docs as f64,
        avg_sentences: records
            .iter()
            .map(|r| r.sentence_spans.len() as f64)
            .sum::<f64>()
            / docs as f64,
        dropped_docs: dropped,
    };

    Ok(Corpus {
        records,
        vocab,
        labels,
        stats,
    })
}

// ── tokenized-corpus cache ──────────────────────────────────────────

const CACHE_HEADER: &str = "hiegat-corpus-cache v1";

/// Writes a tokenized corpus as a deterministic text cache.
pub fn write_cache(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{CACHE_HEADER}");
    let _ = writeln!(out, "labels\t{}", corpus.labels.join("\t"));
    let _ = writeln!(out, "vocab\t{}", corpus.vocab.size());
    for tok in corpus.vocab.tokens() {
        let _ = writeln!(out, "{tok}");
    }
    let _ = writeln!(out, "records\t{}", corpus.records.len());
    for r in &corpus.records {
        let ids: Vec<String> = r.tokens.iter().map(|t| t.to_string()).collect();
        let spans: Vec<String> = r
            .sentence_spans
            .iter()
            .map(|(s, e)| format!("{s}:{e}"))
            .collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.doc_id,
            r.split.as_str(),
            r.label_id,
            r.surface_len,
            ids.join(" "),
            spans.join(",")
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a cache produced by [`write_cache`].
pub fn read_cache(path: &Path) -> Result<Corpus> {
    let name = path.display().to_string();
    let err = |line: usize, message: String| HiegatError::Format {
        path: name.clone(),
        line,
        message,
    };
    let content = fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| err(0, "empty cache".into()))?;
    if header != CACHE_HEADER {
        return Err(err(1, format!("unexpected header '{header}'")));
    }
    let (_, label_line) = lines
        .next()
        .ok_or_else(|| err(0, "missing labels".into()))?;
    let labels: Vec<String> = label_line
        .strip_prefix("labels\t")
        .ok_or_else(|| err(2, "missing labels line".into()))?
        .split('\t')
        .map(|s| s.to_string())
        .collect();
    let (_, vocab_line) = lines.next().ok_or_else(|| err(0, "missing vocab".into()))?;
    let vocab_size: usize = vocab_line
        .strip_prefix("vocab\t")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(3, "bad vocab line".into()))?;
    let mut id_to_token = Vec::with_capacity(vocab_size);
    for _ in 0..vocab_size {
        let (i, tok) = lines
            .next()
            .ok_or_else(|| err(0, "truncated vocab".into()))?;
        let _ = i;
        id_to_token.push(tok.to_string());
    }
    let vocab = Vocabulary::from_tokens(id_to_token);

    let (_, rec_line) = lines
        .next()
        .ok_or_else(|| err(0, "missing records".into()))?;
    let num_records: usize = rec_line
        .strip_prefix("records\t")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(0, "bad records line".into()))?;
    let mut records = Vec::with_capacity(num_records);
    for _ in 0..num_records {
        let (i, line) = lines
            .next()
            .ok_or_else(|| err(0, "truncated records".into()))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(err(
                i + 1,
                format!("expected 6 fields, got {}", fields.len()),
            ));
        }
        let split = match fields[1] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(err(i + 1, format!("unknown split '{other}'"))),
        };
        let label_id: usize = fields[2]
            .parse()
            .map_err(|_| err(i + 1, "bad label id".into()))?;
        let surface_len: usize = fields[3]
            .parse()
            .map_err(|_| err(i + 1, "bad surface length".into()))?;
        let tokens: Vec<u32> = fields[4]
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| err(i + 1, "bad token id".into())))
            .collect::<Result<_>>()?;
        let mut spans = Vec::new();
        for pair in fields[5].split(',').filter(|s| !s.is_empty()) {
            let (s, e) = pair
                .split_once(':')
                .ok_or_else(|| err(i + 1, "bad span".into()))?;
            spans.push((
                s.parse().map_err(|_| err(i + 1, "bad span start".into()))?,
                e.parse().map_err(|_| err(i + 1, "bad span end".into()))?,
            ));
        }
        records.push(DocumentRecord {
            doc_id: fields[0].to_string(),
            split,
            label_id,
            tokens,
            sentence_spans: spans,
            surface_len,
        });
    }

    let train_docs = records.iter().filter(|r| r.split == Split::Train).count();
    let docs = records.len();
    let stats = CorpusStats {
        docs,
        train_docs,
        test_docs: docs - train_docs,
        vocab_size: vocab.size(),
        num_classes: labels.len(),
        avg_doc_len: records.iter().map(|r| r.surface_len as f64).sum::<f64>() / docs as f64,
        avg_model_tokens: records.iter().map(|r| r.tokens.len() as f64).sum::<f64>() / docs as f64,
        avg_sentences: records
            .iter()
            .map(|r| r.sentence_spans.len() as f64)
            .sum::<f64>()
            / docs as f64,
        dropped_docs: 0,
    };
    Ok(Corpus {
        records,
        vocab,
        labels,
        stats,
    })
}
