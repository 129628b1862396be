//! Record ingestion, tokenization, slang lexicons, vocabularies and region
//! documents.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("slang lexicon {0} contains no terms")]
    EmptyLexicon(PathBuf),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One geotagged short-text record as it arrives on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub region: Option<String>,
    #[serde(rename = "ts")]
    pub timestamp: DateTime<Utc>,
}

impl RawRecord {
    pub fn year(&self) -> i32 {
        self.timestamp.year()
    }
}

/// Parses JSON Lines records. Blank lines are skipped, unknown fields ignored.
pub fn parse_jsonl<R: Read>(reader: R) -> Result<Vec<RawRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.id.is_empty() {
            return Err(CorpusError::Parse {
                line: i + 1,
                msg: "empty record id".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
    parse_jsonl(File::open(path).map_err(io_err(path))?)
}

pub fn write_jsonl<W: Write>(mut writer: W, records: &[RawRecord]) -> std::io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut writer, rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

const DEFAULT_STOPWORDS: &[&str] = &[
    "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be", "been",
    "but", "by", "can", "could", "did", "do", "does", "for", "from", "get", "got", "had", "has",
    "have", "he", "her", "him", "his", "how", "if", "in", "into", "is", "it", "its", "just",
    "me", "my", "no", "not", "now", "of", "ok", "on", "or", "our", "out", "rt", "she", "so",
    "than", "that", "the", "their", "them", "then", "there", "they", "this", "to", "too", "up",
    "us", "was", "we", "were", "what", "when", "who", "will", "with", "would", "you", "your",
];

/// Lowercasing tokenizer for short social-media text.
///
/// Whitespace-separated pieces that are URLs or `@`-mentions are discarded
/// whole; the remainder is lowercased and split on any non-alphanumeric
/// character. Tokens shorter than `min_len` characters and stopwords are
/// dropped.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    stopwords: HashSet<String>,
    pub min_len: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            min_len: 2,
        }
    }
}

impl Tokenizer {
    pub fn new(stopwords: impl IntoIterator<Item = String>, min_len: usize) -> Self {
        Self {
            stopwords: stopwords.into_iter().map(|s| s.to_lowercase()).collect(),
            min_len,
        }
    }

    /// A tokenizer that keeps every alphanumeric token.
    pub fn unfiltered() -> Self {
        Self::new(Vec::new(), 1)
    }

    /// Loads a stopword file (one word per line, `#` comments).
    pub fn with_stopword_file(path: &Path, min_len: usize) -> Result<Self, CorpusError> {
        let words = read_term_lines(path)?;
        Ok(Self::new(words, min_len))
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for piece in text.split_whitespace() {
            if is_url(piece) || piece.starts_with('@') {
                continue;
            }
            let lowered = piece.to_lowercase();
            for tok in lowered.split(|c: char| !c.is_alphanumeric()) {
                if tok.chars().count() < self.min_len || self.stopwords.contains(tok) {
                    continue;
                }
                out.push(tok.to_string());
            }
        }
        out
    }

    pub fn tokenize_record(&self, raw: &RawRecord, lexicon: Option<&SlangLexicon>) -> TokenizedRecord {
        let tokens = self.tokenize(&raw.text);
        let slang_count = lexicon.map_or(0, |lex| tokens.iter().filter(|t| lex.contains(t)).count());
        TokenizedRecord {
            id: raw.id.clone(),
            region: raw.region.clone(),
            year: raw.year(),
            token_count: tokens.len(),
            slang_count,
            tokens,
        }
    }

    /// Tokenizes a batch in parallel; output order matches input order.
    pub fn tokenize_all(&self, raws: &[RawRecord], lexicon: Option<&SlangLexicon>) -> Vec<TokenizedRecord> {
        raws.par_iter().map(|r| self.tokenize_record(r, lexicon)).collect()
    }
}

fn is_url(piece: &str) -> bool {
    let p = piece.to_ascii_lowercase();
    p.starts_with("http://") || p.starts_with("https://") || p.starts_with("www.")
}

fn read_term_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(t.to_string());
    }
    Ok(out)
}

/// A record reduced to tokens. `token_count` and `slang_count` are fixed at
/// tokenization time against the lexicon in force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedRecord {
    pub id: String,
    pub region: Option<String>,
    pub year: i32,
    pub tokens: Vec<String>,
    pub slang_count: usize,
    pub token_count: usize,
}

/// Set of slang terms, normalized exactly like tokenizer output.
#[derive(Debug, Clone)]
pub struct SlangLexicon {
    terms: BTreeSet<String>,
    source: Option<PathBuf>,
}

impl SlangLexicon {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let lex = Self::from_terms(read_term_lines(path)?);
        if lex.is_empty() {
            return Err(CorpusError::EmptyLexicon(path.to_path_buf()));
        }
        Ok(Self {
            source: Some(path.to_path_buf()),
            ..lex
        })
    }

    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let terms = terms
            .into_iter()
            .map(|t| t.as_ref().trim().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        Self { terms, source: None }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.terms.contains(token)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }
}

/// Keeps only lexicon tokens, in their original order.
pub fn strip_to_slang(record: &TokenizedRecord, lexicon: &SlangLexicon) -> Vec<String> {
    record.tokens.iter().filter(|t| lexicon.contains(t)).cloned().collect()
}

pub fn slang_ratio(record: &TokenizedRecord) -> f64 {
    if record.token_count == 0 {
        0.0
    } else {
        record.slang_count as f64 / record.token_count as f64
    }
}

/// All tokens of one region pooled into a bag of words.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegionDocument {
    pub region_id: String,
    pub bag: BTreeMap<String, u32>,
    pub record_count: usize,
}

impl RegionDocument {
    pub fn total_tokens(&self) -> u64 {
        self.bag.values().map(|&c| c as u64).sum()
    }

    fn add(&mut self, tokens: &[String]) {
        for t in tokens {
            *self.bag.entry(t.clone()).or_insert(0) += 1;
        }
        self.record_count += 1;
    }
}

/// Groups located records into one document per region. Records without a
/// region are skipped; callers route those through unlocated assignment.
pub fn assemble_region_documents<'a, I>(records: I) -> BTreeMap<String, RegionDocument>
where
    I: IntoIterator<Item = &'a TokenizedRecord>,
{
    assemble_with(records.into_iter().filter_map(|r| r.region.as_deref().map(|reg| (reg, r.tokens.as_slice()))))
}

/// Like [`assemble_region_documents`] but with an explicit region for each
/// token list, e.g. after unlocated records have been assigned.
pub fn assemble_with<'a, I>(pairs: I) -> BTreeMap<String, RegionDocument>
where
    I: IntoIterator<Item = (&'a str, &'a [String])>,
{
    let mut docs: BTreeMap<String, RegionDocument> = BTreeMap::new();
    for (region, tokens) in pairs {
        docs.entry(region.to_string())
            .or_insert_with(|| RegionDocument {
                region_id: region.to_string(),
                ..Default::default()
            })
            .add(tokens);
    }
    docs
}

/// Splits records into those whose region is known and an unlocated pool
/// (no region, or a region the registry does not contain).
pub fn partition_located<F>(records: Vec<TokenizedRecord>, is_known: F) -> (Vec<TokenizedRecord>, Vec<TokenizedRecord>)
where
    F: Fn(&str) -> bool,
{
    records
        .into_iter()
        .partition(|r| r.region.as_deref().is_some_and(&is_known))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VocabConfig {
    pub min_df: u32,
    pub max_df_fraction: f64,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            min_df: 2,
            max_df_fraction: 0.5,
        }
    }
}

impl VocabConfig {
    pub fn unpruned() -> Self {
        Self {
            min_df: 1,
            max_df_fraction: 1.0,
        }
    }
}

/// Dense token ↔ index map with document frequencies. Indices follow sorted
/// token order so construction is independent of input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    df: Vec<u32>,
    n_docs: usize,
}

impl Vocabulary {
    /// Builds from documents given as token sets or lists; each document
    /// contributes at most one to a token's document frequency.
    pub fn build<D, T, S>(docs: D, config: VocabConfig) -> Self
    where
        D: IntoIterator<Item = T>,
        T: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut df: BTreeMap<String, u32> = BTreeMap::new();
        let mut n_docs = 0usize;
        for doc in docs {
            n_docs += 1;
            let seen: BTreeSet<String> = doc.into_iter().map(|s| s.as_ref().to_string()).collect();
            for t in seen {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let max_df = config.max_df_fraction * n_docs as f64;
        let kept: Vec<(String, u32)> = df
            .into_iter()
            .filter(|&(_, d)| d >= config.min_df && d as f64 <= max_df)
            .collect();
        Self::from_entries(kept, n_docs)
    }

    fn from_entries(entries: Vec<(String, u32)>, n_docs: usize) -> Self {
        let mut tokens = Vec::with_capacity(entries.len());
        let mut df = Vec::with_capacity(entries.len());
        for (t, d) in entries {
            tokens.push(t);
            df.push(d);
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            index,
            df,
            n_docs,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn df(&self, index: usize) -> u32 {
        self.df[index]
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps tokens to indices, dropping out-of-vocabulary tokens.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.index_of(t.as_ref())).collect()
    }

    /// Expands a bag into a flat index sequence (sorted by token).
    pub fn encode_bag(&self, doc: &RegionDocument) -> Vec<usize> {
        let mut out = Vec::new();
        for (t, &c) in &doc.bag {
            if let Some(i) = self.index_of(t) {
                out.extend(std::iter::repeat_n(i, c as usize));
            }
        }
        out
    }

    /// Stable content hash of the token list.
    pub fn hash(&self) -> String {
        crate::seeds::fingerprint(self.tokens.join("\n").as_bytes())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), CorpusError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["token", "index", "df"])?;
        for (i, t) in self.tokens.iter().enumerate() {
            w.write_record([t.as_str(), &i.to_string(), &self.df[i].to_string()])?;
        }
        w.flush().map_err(|e| CorpusError::Csv(e.into()))?;
        Ok(())
    }
}

/// Term-frequency × inverse-document-frequency weights, one row per region
/// in sorted region order: `tf(d,t) · ln(N / df(t))`.
pub fn tfidf(docs: &BTreeMap<String, RegionDocument>, vocab: &Vocabulary) -> Vec<(String, Vec<f64>)> {
    let n = docs.len() as f64;
    let idf: Vec<f64> = (0..vocab.len())
        .map(|i| {
            let df = vocab.df(i) as f64;
            if df > 0.0 {
                (n / df).ln()
            } else {
                0.0
            }
        })
        .collect();
    docs.iter()
        .map(|(region, doc)| {
            let mut row = vec![0.0; vocab.len()];
            for (t, &c) in &doc.bag {
                if let Some(i) = vocab.index_of(t) {
                    row[i] = c as f64 * idf[i];
                }
            }
            (region.clone(), row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, region: Option<&str>, tokens: &[&str], slang: usize) -> TokenizedRecord {
        TokenizedRecord {
            id: id.into(),
            region: region.map(String::from),
            year: 2015,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            slang_count: slang,
            token_count: tokens.len(),
        }
    }

    #[test]
    fn tokenize_examples() {
        let tk = Tokenizer::default();
        assert!(tk.tokenize("").is_empty());
        assert_eq!(tk.tokenize("HIV testing @clinic http://t.co/x"), vec!["hiv", "testing"]);
        assert!(tk.tokenize("a I ok").is_empty());
    }

    #[test]
    fn tokenize_strips_punctuation_and_hashtags() {
        let tk = Tokenizer::default();
        assert_eq!(tk.tokenize("Free #testing!!! ... today, www.x.org"), vec!["free", "testing", "today"]);
        assert!(tk.tokenize("?! -- ...").is_empty());
    }

    #[test]
    fn custom_stopwords() {
        let tk = Tokenizer::new(vec!["HIV".to_string()], 2);
        assert_eq!(tk.tokenize("hiv testing ok"), vec!["testing", "ok"]);
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(text in "[a-zA-Z0-9 @#.,:/!éÅß\\-]{0,80}") {
            let tk = Tokenizer::default();
            let once = tk.tokenize(&text);
            let twice = tk.tokenize(&once.join(" "));
            prop_assert_eq!(&once, &twice);
            for t in &once {
                prop_assert!(!t.chars().any(char::is_whitespace));
                prop_assert_eq!(t.to_lowercase(), t.clone());
            }
        }

        #[test]
        fn slang_count_matches_strip(words in proptest::collection::vec("(lit|fam|hiv|test|yeet|clinic)", 0..20)) {
            let lex = SlangLexicon::from_terms(["lit", "fam", "yeet"]);
            let raw = RawRecord { id: "x".into(), text: words.join(" "), region: None, timestamp: Utc::now() };
            let r = Tokenizer::default().tokenize_record(&raw, Some(&lex));
            prop_assert_eq!(r.slang_count, strip_to_slang(&r, &lex).len());
            prop_assert!(r.slang_count <= r.token_count);
        }
    }

    #[test]
    fn lexicon_load_dedups_and_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("slang.txt");
        std::fs::write(&p, "# comment\nlit\nLIT\n\nfam\n").unwrap();
        let lex = SlangLexicon::load(&p).unwrap();
        assert_eq!(lex.len(), 2);
        assert!(lex.contains("lit") && lex.contains("fam"));

        std::fs::write(&p, "yeet\n").unwrap();
        let lex = SlangLexicon::load(&p).unwrap();
        assert!(lex.contains("yeet"));
        assert!(!lex.contains("yet"));
    }

    #[test]
    fn lexicon_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.txt");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(SlangLexicon::load(&p), Err(CorpusError::EmptyLexicon(_))));
        std::fs::write(&p, "# only comments\n\n").unwrap();
        assert!(matches!(SlangLexicon::load(&p), Err(CorpusError::EmptyLexicon(_))));
        assert!(matches!(SlangLexicon::load(&dir.path().join("missing")), Err(CorpusError::Io { .. })));
    }

    #[test]
    fn strip_to_slang_examples() {
        let lex = SlangLexicon::from_terms(["lit", "fam"]);
        assert_eq!(strip_to_slang(&rec("1", None, &["hiv", "lit", "fam"], 2), &lex), vec!["lit", "fam"]);
        assert!(strip_to_slang(&rec("2", None, &["hiv", "test"], 0), &lex).is_empty());
        assert_eq!(strip_to_slang(&rec("3", None, &["fam", "lit"], 2), &lex), vec!["fam", "lit"]);
    }

    #[test]
    fn slang_ratio_examples() {
        let mut r = rec("1", None, &["w"; 10], 0);
        assert_eq!(slang_ratio(&r), 0.0);
        r = rec("2", None, &["w"; 5], 5);
        assert_eq!(slang_ratio(&r), 1.0);
        r = rec("3", None, &["w"; 12], 3);
        assert_eq!(slang_ratio(&r), 0.25);
        r = rec("4", None, &[], 0);
        assert_eq!(slang_ratio(&r), 0.0);
    }

    #[test]
    fn region_documents() {
        let recs = vec![
            rec("1", Some("A"), &["hiv", "test"], 0),
            rec("2", Some("A"), &["test"], 0),
            rec("3", Some("B"), &["clinic"], 0),
            rec("4", None, &["lost"], 0),
        ];
        let docs = assemble_region_documents(&recs);
        assert_eq!(docs.keys().collect::<Vec<_>>(), vec!["A", "B"]);
        assert_eq!(docs["A"].record_count, 2);
        assert_eq!(docs["A"].bag["test"], 2);
        // recount from raw located records
        let located: u64 = recs.iter().filter(|r| r.region.is_some()).map(|r| r.tokens.len() as u64).sum();
        assert_eq!(docs.values().map(|d| d.total_tokens()).sum::<u64>(), located);
        assert!(assemble_region_documents(&[]).is_empty());
    }

    #[test]
    fn partition_quarantines_unknown_regions() {
        let recs = vec![
            rec("1", Some("A"), &["x"], 0),
            rec("2", Some("Z"), &["x"], 0),
            rec("3", None, &["x"], 0),
        ];
        let (located, unlocated) = partition_located(recs, |r| r == "A");
        assert_eq!(located.len(), 1);
        assert_eq!(unlocated.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), vec!["2", "3"]);
    }

    #[test]
    fn vocabulary_pruning_and_roundtrip() {
        let docs = vec![vec!["a1", "b1", "c1"], vec!["a1", "b1"], vec!["a1", "d1"], vec!["b1", "e1"]];
        let v = Vocabulary::build(docs.clone(), VocabConfig::default());
        // a1 and b1 have df 3 of 4 > 0.5; c1, d1, e1 have df 1 < 2
        assert!(v.is_empty());
        let v = Vocabulary::build(docs, VocabConfig { min_df: 1, max_df_fraction: 0.75 });
        assert_eq!(v.tokens(), &["a1", "b1", "c1", "d1", "e1"]);
        for i in 0..v.len() {
            assert_eq!(v.index_of(v.token(i).unwrap()), Some(i));
        }
        assert_eq!(v.df(0), 3);
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("token,index,df\na1,0,3\n"));
    }

    #[test]
    fn tfidf_examples() {
        let recs = vec![rec("1", Some("A"), &["x1", "x1", "x1", "y1"], 0), rec("2", Some("B"), &["y1"], 0)];
        let docs = assemble_region_documents(&recs);
        let vocab = Vocabulary::build(docs.values().map(|d| d.bag.keys()), VocabConfig::unpruned());
        let w = tfidf(&docs, &vocab);
        let x = vocab.index_of("x1").unwrap();
        let y = vocab.index_of("y1").unwrap();
        assert!((w[0].1[x] - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert!((w[0].1[x] - 2.0794).abs() < 1e-4);
        assert_eq!(w[1].1[y], 0.0);
        assert_eq!(w[0].1[y], 0.0);

        let single = assemble_region_documents(&recs[..1]);
        let v1 = Vocabulary::build(single.values().map(|d| d.bag.keys()), VocabConfig::unpruned());
        assert!(tfidf(&single, &v1)[0].1.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn jsonl_parsing() {
        let text = r#"{"id":"1","text":"hello world","region":"42101","ts":"2015-03-01T12:00:00Z","extra":5}

{"id":"2","text":"x","region":null,"ts":"2016-01-01T00:00:00Z"}
"#;
        let recs = parse_jsonl(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].region.as_deref(), Some("42101"));
        assert_eq!(recs[0].year(), 2015);
        assert_eq!(recs[1].region, None);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        assert_eq!(parse_jsonl(buf.as_slice()).unwrap(), recs);

        assert!(matches!(parse_jsonl(r#"{"id":"1","text":"x","ts":"nope"}"#.as_bytes()), Err(CorpusError::Parse { line: 1, .. })));
        assert!(parse_jsonl(r#"{"id":"","text":"x","ts":"2015-03-01T12:00:00Z"}"#.as_bytes()).is_err());
    }
}
