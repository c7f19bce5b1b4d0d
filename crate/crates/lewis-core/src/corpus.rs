//! Tokenization, vocabulary management, and dataset IO for style-labeled
//! corpora.
//!
//! Corpora are plain UTF-8 text, one example per line, one file per style
//! per split. Tokenization is whitespace splitting after lowercasing, with
//! trailing punctuation separated into standalone tokens; this keeps edit
//! scripts human-auditable.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default cap on example length, in tokens.
pub const MAX_LEN_DEFAULT: usize = 128;

/// Header line of the vocabulary file format.
pub const VOCAB_MAGIC: &str = "LEWIS-VOCAB v1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("input is empty after normalization")]
    EmptyInput,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("token id {0} is out of vocabulary range")]
    InvalidId(u32),
    #[error("invalid token surface {0:?}")]
    BadSurface(String),
    #[error("vocabulary format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One of the two styles of a transfer task (which concrete styles they
/// are — positive/negative, impolite/polite — is run configuration).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StyleLabel {
    Style0,
    Style1,
}

impl StyleLabel {
    pub fn opposite(self) -> StyleLabel {
        match self {
            StyleLabel::Style0 => StyleLabel::Style1,
            StyleLabel::Style1 => StyleLabel::Style0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            StyleLabel::Style0 => 0,
            StyleLabel::Style1 => 1,
        }
    }

    pub fn from_index(i: usize) -> StyleLabel {
        if i == 0 {
            StyleLabel::Style0
        } else {
            StyleLabel::Style1
        }
    }

    /// The vocabulary marker token for this style, used as a direction
    /// prefix by the editor models.
    pub fn marker(self) -> Special {
        match self {
            StyleLabel::Style0 => Special::Style0,
            StyleLabel::Style1 => Special::Style1,
        }
    }
}

impl fmt::Display for StyleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StyleLabel::Style0 => write!(f, "style0"),
            StyleLabel::Style1 => write!(f, "style1"),
        }
    }
}

/// Reserved vocabulary entries. Ids are fixed: `Special as u32`.
///
/// Surfaces all contain an uppercase letter, and tokenization lowercases
/// its input, so natural text can never produce a special token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Special {
    Pad = 0,
    Unk = 1,
    Bos = 2,
    Eos = 3,
    Sep = 4,
    Mask = 5,
    Slot = 6,
    Cls = 7,
    FillSep = 8,
    Style0 = 9,
    Style1 = 10,
}

pub const SPECIALS: [Special; 11] = [
    Special::Pad,
    Special::Unk,
    Special::Bos,
    Special::Eos,
    Special::Sep,
    Special::Mask,
    Special::Slot,
    Special::Cls,
    Special::FillSep,
    Special::Style0,
    Special::Style1,
];

impl Special {
    pub fn surface(self) -> &'static str {
        match self {
            Special::Pad => "<PAD>",
            Special::Unk => "<UNK>",
            Special::Bos => "<BOS>",
            Special::Eos => "<EOS>",
            Special::Sep => "<SEP>",
            Special::Mask => "<MASK>",
            Special::Slot => "SLOT",
            Special::Cls => "<CLS>",
            Special::FillSep => "<FILL-SEP>",
            Special::Style0 => "<STYLE-0>",
            Special::Style1 => "<STYLE-1>",
        }
    }

    pub fn id(self) -> u32 {
        self as u32
    }
}

/// An ordered, non-empty sequence of token surfaces.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Builds a sequence from pre-split tokens. Tokens must be non-empty
    /// and whitespace-free; the sequence must be non-empty.
    pub fn new(tokens: Vec<String>) -> Result<TokenSeq, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::EmptyInput);
        }
        for t in &tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(CorpusError::BadSurface(t.clone()));
            }
        }
        Ok(TokenSeq(tokens))
    }

    /// Parses a space-joined rendering (the inverse of [`TokenSeq::text`]).
    /// Unlike [`tokenize`] this does not normalize: it is for reading back
    /// artifact files whose tokens may include specials like `<MASK>`.
    pub fn from_text(text: &str) -> Result<TokenSeq, CorpusError> {
        TokenSeq::new(text.split_whitespace().map(str::to_owned).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn truncated(&self, max_len: usize) -> TokenSeq {
        if self.0.len() <= max_len {
            self.clone()
        } else {
            TokenSeq(self.0[..max_len].to_vec())
        }
    }

    /// Space-joined surface text.
    pub fn text(&self) -> String {
        self.0.join(" ")
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.text())
    }
}

/// Lowercases, splits on whitespace, and separates trailing punctuation
/// into standalone tokens ("ribs!" becomes "ribs", "!").
pub fn tokenize(text: &str) -> Result<TokenSeq, CorpusError> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lower.split_whitespace() {
        let trailing = chunk
            .chars()
            .rev()
            .take_while(|c| c.is_ascii_punctuation())
            .count();
        let chars: Vec<char> = chunk.chars().collect();
        // A chunk that is nothing but punctuation keeps its first char as
        // the head so no token comes out empty.
        let head_len = (chars.len() - trailing).max(1);
        tokens.push(chars[..head_len].iter().collect());
        for &c in &chars[head_len..] {
            tokens.push(c.to_string());
        }
    }
    TokenSeq::new(tokens)
}

/// Bijective surface/id mapping with reserved special entries.
///
/// Content ids are assigned by descending corpus frequency, ties broken
/// lexicographically, so identical corpus bytes always produce identical
/// vocabularies.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const N_SPECIALS: usize = SPECIALS.len();

    /// Builds a vocabulary from corpus files: tokens with frequency >=
    /// `min_count` get ids, everything else maps to `<UNK>`.
    pub fn build(files: &[impl AsRef<Path>], min_count: u64) -> Result<Vocabulary, CorpusError> {
        let mut freq: HashMap<String, u64> = HashMap::new();
        let mut saw_example = false;
        for path in files {
            let reader = BufReader::new(File::open(path.as_ref())?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                saw_example = true;
                for tok in tokenize(&line)?.tokens() {
                    *freq.entry(tok.clone()).or_insert(0) += 1;
                }
            }
        }
        if !saw_example {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut kept: Vec<(String, u64)> = freq
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut surfaces: Vec<String> = SPECIALS.iter().map(|s| s.surface().to_owned()).collect();
        let mut counts = vec![0u64; Vocabulary::N_SPECIALS];
        for (surface, count) in kept {
            surfaces.push(surface);
            counts.push(count);
        }
        let index = surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            surfaces,
            counts,
            index,
        })
    }

    pub fn size(&self) -> usize {
        self.surfaces.len()
    }

    pub fn id(&self, s: Special) -> u32 {
        s.id()
    }

    /// Id for a surface, `<UNK>` if out of vocabulary.
    pub fn encode_token(&self, surface: &str) -> u32 {
        self.index
            .get(surface)
            .copied()
            .unwrap_or(Special::Unk.id())
    }

    pub fn encode(&self, seq: &TokenSeq) -> Vec<u32> {
        seq.tokens().iter().map(|t| self.encode_token(t)).collect()
    }

    pub fn surface(&self, id: u32) -> Result<&str, CorpusError> {
        self.surfaces
            .get(id as usize)
            .map(String::as_str)
            .ok_or(CorpusError::InvalidId(id))
    }

    pub fn decode(&self, ids: &[u32]) -> Result<TokenSeq, CorpusError> {
        let mut tokens = Vec::with_capacity(ids.len());
        for &id in ids {
            tokens.push(self.surface(id)?.to_owned());
        }
        TokenSeq::new(tokens)
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.index.contains_key(surface)
    }

    fn render(&self) -> String {
        let mut out = String::from(VOCAB_MAGIC);
        out.push('\n');
        for (id, (surface, count)) in self.surfaces.iter().zip(&self.counts).enumerate() {
            out.push_str(&format!("{id}\t{surface}\t{count}\n"));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let mut f = File::create(path)?;
        f.write_all(self.render().as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vocabulary, CorpusError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        match lines.next() {
            Some(Ok(header)) if header == VOCAB_MAGIC => {}
            _ => return Err(CorpusError::Format("missing vocabulary header".into())),
        }
        let mut surfaces = Vec::new();
        let mut counts = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (id, surface, count) = match (parts.next(), parts.next(), parts.next()) {
                (Some(id), Some(surface), Some(count)) => (id, surface, count),
                _ => return Err(CorpusError::Format(format!("bad entry on line {}", n + 2))),
            };
            let id: usize = id
                .parse()
                .map_err(|_| CorpusError::Format(format!("bad id on line {}", n + 2)))?;
            if id != surfaces.len() {
                return Err(CorpusError::Format(format!(
                    "non-contiguous id {id} on line {}",
                    n + 2
                )));
            }
            let count: u64 = count
                .parse()
                .map_err(|_| CorpusError::Format(format!("bad count on line {}", n + 2)))?;
            surfaces.push(surface.to_owned());
            counts.push(count);
        }
        if surfaces.len() < Vocabulary::N_SPECIALS {
            return Err(CorpusError::Format("missing special entries".into()));
        }
        for s in SPECIALS {
            if surfaces[s.id() as usize] != s.surface() {
                return Err(CorpusError::Format(format!(
                    "special id {} is {:?}, expected {:?}",
                    s.id(),
                    surfaces[s.id() as usize],
                    s.surface()
                )));
            }
        }
        let index = surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            surfaces,
            counts,
            index,
        })
    }

    /// Hash of the canonical file rendering; stored in model bundles so a
    /// model is never run against a vocabulary it was not trained with.
    pub fn sha256_hex(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

/// A style corpus loaded into memory, in file order.
#[derive(Debug, Clone)]
pub struct StyleCorpus {
    pub label: StyleLabel,
    pub examples: Vec<TokenSeq>,
    /// How many lines exceeded `max_len` and were truncated.
    pub truncated: usize,
}

/// Reads one-example-per-line style data. Overlength lines are truncated
/// to `max_len` and counted; blank lines are skipped.
pub fn load_style_corpus(
    path: impl AsRef<Path>,
    label: StyleLabel,
    max_len: usize,
) -> Result<StyleCorpus, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut examples = Vec::new();
    let mut truncated = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq = tokenize(&line)?;
        if seq.len() > max_len {
            truncated += 1;
            examples.push(seq.truncated(max_len));
        } else {
            examples.push(seq);
        }
    }
    Ok(StyleCorpus {
        label,
        examples,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp_corpus(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn tokenize_splits_trailing_punctuation() {
        let seq = tokenize("the worst ribs!").unwrap();
        assert_eq!(seq.tokens(), ["the", "worst", "ribs", "!"]);
    }

    #[test]
    fn tokenize_lowercases() {
        let seq = tokenize("Great place").unwrap();
        assert_eq!(seq.tokens(), ["great", "place"]);
    }

    #[test]
    fn tokenize_collapses_whitespace() {
        let seq = tokenize("a  b").unwrap();
        assert_eq!(seq.tokens(), ["a", "b"]);
    }

    #[test]
    fn tokenize_keeps_internal_apostrophes() {
        let seq = tokenize("i've ever had!").unwrap();
        assert_eq!(seq.tokens(), ["i've", "ever", "had", "!"]);
    }

    #[test]
    fn tokenize_empty_input_errors() {
        assert!(matches!(tokenize("   "), Err(CorpusError::EmptyInput)));
        assert!(matches!(tokenize(""), Err(CorpusError::EmptyInput)));
    }

    #[test]
    fn tokenize_never_emits_specials() {
        let seq = tokenize("SLOT <MASK> <EOS> mask").unwrap();
        for tok in seq.tokens() {
            for s in SPECIALS {
                assert_ne!(tok, s.surface());
            }
        }
        assert_eq!(seq.tokens()[0], "slot");
    }

    #[test]
    fn vocabulary_min_count_threshold() {
        let f = tmp_corpus(&["a a b"]);
        let vocab = Vocabulary::build(&[f.path()], 2).unwrap();
        assert!(vocab.contains("a"));
        assert!(!vocab.contains("b"));
        assert_eq!(vocab.encode_token("b"), Special::Unk.id());
    }

    #[test]
    fn vocabulary_deterministic_across_runs() {
        let f = tmp_corpus(&["a b", "b a"]);
        let v1 = Vocabulary::build(&[f.path()], 1).unwrap();
        let v2 = Vocabulary::build(&[f.path()], 1).unwrap();
        assert_eq!(v1.render(), v2.render());
        assert_eq!(v1.sha256_hex(), v2.sha256_hex());
    }

    #[test]
    fn vocabulary_empty_corpus_errors() {
        let f = tmp_corpus(&[]);
        assert!(matches!(
            Vocabulary::build(&[f.path()], 1),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn vocabulary_orders_by_frequency_then_surface() {
        let f = tmp_corpus(&["b b c a a"]);
        let vocab = Vocabulary::build(&[f.path()], 1).unwrap();
        let n = Vocabulary::N_SPECIALS as u32;
        // a and b both occur twice; a wins the tie lexicographically.
        assert_eq!(vocab.encode_token("a"), n);
        assert_eq!(vocab.encode_token("b"), n + 1);
        assert_eq!(vocab.encode_token("c"), n + 2);
    }

    #[test]
    fn vocabulary_save_load_round_trip() {
        let f = tmp_corpus(&["a b c", "a b", "a"]);
        let vocab = Vocabulary::build(&[f.path()], 1).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        vocab.save(out.path()).unwrap();
        let loaded = Vocabulary::load(out.path()).unwrap();
        assert_eq!(vocab.render(), loaded.render());
        for s in SPECIALS {
            assert_eq!(loaded.surface(s.id()).unwrap(), s.surface());
        }
    }

    #[test]
    fn vocabulary_load_rejects_bad_header() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "NOT-A-VOCAB").unwrap();
        assert!(matches!(
            Vocabulary::load(f.path()),
            Err(CorpusError::Format(_))
        ));
    }

    #[test]
    fn load_style_corpus_preserves_order() {
        let f = tmp_corpus(&["one line", "two lines here", "three !"]);
        let corpus = load_style_corpus(f.path(), StyleLabel::Style0, 128).unwrap();
        assert_eq!(corpus.examples.len(), 3);
        assert_eq!(corpus.examples[0].tokens(), ["one", "line"]);
        assert_eq!(corpus.examples[2].tokens(), ["three", "!"]);
        assert_eq!(corpus.truncated, 0);
    }

    #[test]
    fn load_style_corpus_truncates_overlength_lines() {
        let long = vec!["tok"; 200].join(" ");
        let f = tmp_corpus(&[&long]);
        let corpus = load_style_corpus(f.path(), StyleLabel::Style1, 128).unwrap();
        assert_eq!(corpus.examples.len(), 1);
        assert_eq!(corpus.examples[0].len(), 128);
        assert_eq!(corpus.truncated, 1);
    }

    #[test]
    fn load_style_corpus_missing_file_is_io_error() {
        let res = load_style_corpus("/no/such/file.txt", StyleLabel::Style0, 128);
        assert!(matches!(res, Err(CorpusError::Io(_))));
    }

    proptest! {
        // encode -> decode reproduces surfaces for UNK-free input.
        #[test]
        fn encode_decode_round_trip(words in proptest::collection::vec("[a-c]{1,3}", 1..12)) {
            let f = tmp_corpus(&[&words.join(" ")]);
            let vocab = Vocabulary::build(&[f.path()], 1).unwrap();
            let seq = TokenSeq::new(words.clone()).unwrap();
            let ids = vocab.encode(&seq);
            let back = vocab.decode(&ids).unwrap();
            prop_assert_eq!(back.tokens(), seq.tokens());
        }

        #[test]
        fn tokenize_detokenize_normalizes_whitespace(raw in "[a-z!., ]{1,40}") {
            prop_assume!(raw.split_whitespace().next().is_some());
            let seq = tokenize(&raw).unwrap();
            let again = tokenize(&seq.text()).unwrap();
            prop_assert_eq!(seq.tokens(), again.tokens());
        }
    }
}
