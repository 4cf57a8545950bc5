//! Local lexical retrieval over standards and reference snippets.
//!
//! Documents are split into overlapping word windows (preferring blank-line
//! boundaries) and ranked with Okapi BM25:
//!
//! ```text
//! idf(t)      = ln(1 + (N - n_t + 0.5) / (n_t + 0.5))
//! score(q, c) = Σ_{t ∈ distinct(q)} idf(t) · tf(t,c)·(k1+1) / (tf(t,c) + k1·(1 - b + b·|c|/avgdl))
//! ```
//!
//! where `N` is the number of chunks, `n_t` the number of chunks containing
//! `t`, and lengths are measured in ranking tokens (lower-cased alphanumeric
//! runs). Hits with score 0 are dropped; ties are broken by chunk id.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

pub const INDEX_FORMAT: &str = "genonet-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("document {0:?} is empty")]
    EmptyDocument(String),
    #[error("the index holds no chunks")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingPolicy {
    /// Window size in whitespace-delimited words.
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkingPolicy {
    fn default() -> Self {
        Self {
            chunk_size: 512,
            overlap: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeChunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: u32,
    pub text: String,
    /// Markdown headings in effect where the chunk starts, outermost first.
    #[serde(default)]
    pub heading_path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub chunk_id: String,
    pub score: f64,
    pub rank: u32,
}

/// A hit resolved to its chunk, ready to lay out in a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextChunk {
    pub rank: u32,
    pub chunk_id: String,
    pub doc_id: String,
    pub score: f64,
    pub text: String,
}

/// Lower-cased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whitespace-delimited word count; the unit for chunk windows and prompt budgets.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Splits `text` into `(start_byte, end_byte)` windows.
///
/// Windows hold at most `chunk_size` words and consecutive windows share
/// `overlap` words. A window ends at the last paragraph boundary inside it when
/// one exists far enough in to guarantee progress.
pub fn chunk_spans(text: &str, policy: ChunkingPolicy) -> Vec<(usize, usize)> {
    let words = split_words(text);
    let n = words.len();
    let size = policy.chunk_size.max(1);
    let overlap = policy.overlap.min(size - 1);
    let mut spans = Vec::new();
    let mut start = 0usize;
    while start < n {
        let hard_end = (start + size).min(n);
        let end = if hard_end == n {
            n
        } else {
            (start + overlap + 1..=hard_end)
                .rev()
                .find(|&b| b < n && words[b].2)
                .unwrap_or(hard_end)
        };
        spans.push((words[start].0, words[end - 1].1));
        if end == n {
            break;
        }
        start = end - overlap;
    }
    spans
}

/// `(start, end, starts_paragraph)` for each whitespace-delimited word.
fn split_words(text: &str) -> Vec<(usize, usize, bool)> {
    let mut out = Vec::new();
    let mut newlines = 0usize;
    let mut current: Option<(usize, bool)> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some((s, para)) = current.take() {
                out.push((s, i, para));
                newlines = 0;
            }
            if c == '\n' {
                newlines += 1;
            }
        } else if current.is_none() {
            current = Some((i, newlines >= 2 && !out.is_empty()));
        }
    }
    if let Some((s, para)) = current {
        out.push((s, text.len(), para));
    }
    out
}

#[derive(Debug, Clone)]
struct ChunkStats {
    tf: HashMap<String, u32>,
    len: u32,
}

impl ChunkStats {
    fn of(text: &str) -> Self {
        let mut tf = HashMap::new();
        let mut len = 0;
        for t in tokenize(text) {
            *tf.entry(t).or_insert(0) += 1;
            len += 1;
        }
        Self { tf, len }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DocEntry {
    revision: u32,
    chunks: Vec<KnowledgeChunk>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    chunking: ChunkingPolicy,
    bm25: Bm25Params,
    docs: BTreeMap<String, DocEntry>,
}

/// In-memory BM25 index keyed by document id.
#[derive(Debug, Clone)]
pub struct KnowledgeIndex {
    policy: ChunkingPolicy,
    params: Bm25Params,
    docs: BTreeMap<String, DocEntry>,
    stats: HashMap<String, ChunkStats>,
    doc_freq: HashMap<String, u32>,
    total_len: u64,
}

impl Default for KnowledgeIndex {
    fn default() -> Self {
        Self::new(ChunkingPolicy::default(), Bm25Params::default())
    }
}

/// Index shared between request handlers; ingest takes the write lock.
pub type SharedIndex = Arc<RwLock<KnowledgeIndex>>;

impl KnowledgeIndex {
    pub fn new(policy: ChunkingPolicy, params: Bm25Params) -> Self {
        Self {
            policy,
            params,
            docs: BTreeMap::new(),
            stats: HashMap::new(),
            doc_freq: HashMap::new(),
            total_len: 0,
        }
    }

    pub fn policy(&self) -> ChunkingPolicy {
        self.policy
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn chunk_count(&self) -> usize {
        self.stats.len()
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn chunks(&self) -> impl Iterator<Item = &KnowledgeChunk> {
        self.docs.values().flat_map(|d| d.chunks.iter())
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&KnowledgeChunk> {
        let (doc_id, _) = chunk_id.rsplit_once('@')?;
        self.docs
            .get(doc_id)?
            .chunks
            .iter()
            .find(|c| c.chunk_id == chunk_id)
    }

    /// Splits and indexes `doc`, atomically replacing any earlier revision of
    /// `doc_id`. Returns the number of chunks.
    pub fn ingest(&mut self, doc_id: &str, doc: &str) -> Result<usize, RetrievalError> {
        if doc.trim().is_empty() {
            return Err(RetrievalError::EmptyDocument(doc_id.to_string()));
        }
        let revision = self.docs.get(doc_id).map_or(1, |d| d.revision + 1);
        let chunks = build_chunks(doc_id, revision, doc, self.policy);
        let count = chunks.len();
        self.remove(doc_id);
        for c in &chunks {
            self.add_stats(c);
        }
        self.docs
            .insert(doc_id.to_string(), DocEntry { revision, chunks });
        Ok(count)
    }

    pub fn remove(&mut self, doc_id: &str) -> bool {
        let Some(entry) = self.docs.remove(doc_id) else {
            return false;
        };
        for c in &entry.chunks {
            if let Some(s) = self.stats.remove(&c.chunk_id) {
                self.total_len -= u64::from(s.len);
                for term in s.tf.keys() {
                    if let Some(df) = self.doc_freq.get_mut(term) {
                        *df -= 1;
                        if *df == 0 {
                            self.doc_freq.remove(term);
                        }
                    }
                }
            }
        }
        true
    }

    fn add_stats(&mut self, chunk: &KnowledgeChunk) {
        let s = ChunkStats::of(&chunk.text);
        self.total_len += u64::from(s.len);
        for term in s.tf.keys() {
            *self.doc_freq.entry(term.clone()).or_insert(0) += 1;
        }
        self.stats.insert(chunk.chunk_id.clone(), s);
    }

    /// Ingests every `*.txt` file of `dir` (doc id = file stem), in name order.
    pub fn ingest_dir(&mut self, dir: &Path) -> Result<Vec<(String, usize)>, RetrievalError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        paths.sort();
        let mut out = Vec::new();
        for p in paths {
            let doc_id = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| RetrievalError::Format(format!("bad file name {}", p.display())))?
                .to_string();
            let text = std::fs::read_to_string(&p)?;
            let n = self.ingest(&doc_id, &text)?;
            out.push((doc_id, n));
        }
        Ok(out)
    }

    fn idf(&self, term: &str) -> f64 {
        let n = f64::from(self.doc_freq.get(term).copied().unwrap_or(0));
        let total = self.stats.len() as f64;
        (1.0 + (total - n + 0.5) / (n + 0.5)).ln()
    }

    /// BM25 score of one chunk for a query.
    pub fn score(&self, query: &str, chunk_id: &str) -> Option<f64> {
        let stats = self.stats.get(chunk_id)?;
        let terms = distinct_terms(query);
        Some(self.score_terms(&terms, stats))
    }

    fn score_terms(&self, terms: &[String], stats: &ChunkStats) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let avgdl = self.total_len as f64 / self.stats.len() as f64;
        let norm = if avgdl > 0.0 {
            1.0 - b + b * f64::from(stats.len) / avgdl
        } else {
            1.0
        };
        terms
            .iter()
            .filter_map(|t| stats.tf.get(t).map(|&tf| (t, f64::from(tf))))
            .map(|(t, tf)| self.idf(t) * tf * (k1 + 1.0) / (tf + k1 * norm))
            .sum()
    }

    /// Top-`k` chunks with a positive score, best first.
    pub fn query(&self, text: &str, k: usize) -> Result<Vec<RankedHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if self.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let terms = distinct_terms(text);
        let mut scored: Vec<(f64, &str)> = self
            .stats
            .iter()
            .map(|(id, s)| (self.score_terms(&terms, s), id.as_str()))
            .filter(|(score, _)| *score > 0.0)
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        Ok(scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (score, id))| RankedHit {
                chunk_id: id.to_string(),
                score,
                rank: i as u32 + 1,
            })
            .collect())
    }

    /// Looks up the chunk behind every hit; unknown ids are skipped.
    pub fn resolve(&self, hits: &[RankedHit]) -> Vec<ContextChunk> {
        hits.iter()
            .filter_map(|h| {
                self.chunk(&h.chunk_id).map(|c| ContextChunk {
                    rank: h.rank,
                    chunk_id: c.chunk_id.clone(),
                    doc_id: c.doc_id.clone(),
                    score: h.score,
                    text: c.text.clone(),
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let file = IndexFile {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            chunking: self.policy,
            bm25: self.params,
            docs: self.docs.clone(),
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| RetrievalError::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path)?;
        let file: IndexFile =
            serde_json::from_str(&text).map_err(|e| RetrievalError::Format(e.to_string()))?;
        if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
            return Err(RetrievalError::Format(format!(
                "unsupported index {} v{}",
                file.format, file.version
            )));
        }
        let mut index = Self::new(file.chunking, file.bm25);
        for (doc_id, entry) in file.docs {
            for c in &entry.chunks {
                index.add_stats(c);
            }
            index.docs.insert(doc_id, entry);
        }
        Ok(index)
    }

    pub fn into_shared(self) -> SharedIndex {
        Arc::new(RwLock::new(self))
    }
}

fn distinct_terms(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    tokenize(text)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

fn build_chunks(
    doc_id: &str,
    revision: u32,
    doc: &str,
    policy: ChunkingPolicy,
) -> Vec<KnowledgeChunk> {
    let headings = heading_offsets(doc);
    chunk_spans(doc, policy)
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| KnowledgeChunk {
            chunk_id: format!("{doc_id}@{revision}#{i:04}"),
            doc_id: doc_id.to_string(),
            ordinal: i as u32,
            text: doc[s..e].to_string(),
            heading_path: heading_path_at(&headings, s),
        })
        .collect()
}

/// `(offset, level, title)` of every markdown heading line.
fn heading_offsets(doc: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in doc.split_inclusive('\n') {
        let trimmed = line.trim_end();
        let level = trimmed.chars().take_while(|c| *c == '#').count();
        if level > 0 && trimmed[level..].starts_with(' ') {
            out.push((offset, level, trimmed[level..].trim().to_string()));
        }
        offset += line.len();
    }
    out
}

fn heading_path_at(headings: &[(usize, usize, String)], pos: usize) -> Vec<String> {
    let mut path: Vec<(usize, String)> = Vec::new();
    for (off, level, title) in headings {
        if *off > pos {
            break;
        }
        while path.last().is_some_and(|(l, _)| l >= level) {
            path.pop();
        }
        path.push((*level, title.clone()));
    }
    path.into_iter().map(|(_, t)| t).collect()
}

pub const CONTEXT_OPEN: &str = "### Reference context";
pub const CONTEXT_CLOSE: &str = "### End of reference context";

fn render_context_block(chunks: &[ContextChunk]) -> String {
    let mut out = String::new();
    out.push_str(CONTEXT_OPEN);
    out.push('\n');
    for c in chunks {
        out.push_str(&format!("[{}] source: {} ({})\n", c.rank, c.doc_id, c.chunk_id));
        out.push_str(c.text.trim());
        out.push_str("\n\n");
    }
    out.push_str(CONTEXT_CLOSE);
    out
}

/// Base prompt followed by a delimited context block listing chunks in rank
/// order. The whole prompt stays within `budget_words`; the lowest-ranked
/// chunks are dropped whole until it fits.
pub fn augment_prompt(base: &str, context: &[ContextChunk], budget_words: usize) -> String {
    let mut ordered: Vec<ContextChunk> = context.to_vec();
    ordered.sort_by_key(|c| c.rank);
    let base_words = word_count(base);
    for keep in (1..=ordered.len()).rev() {
        let block = render_context_block(&ordered[..keep]);
        if base_words + word_count(&block) <= budget_words {
            return format!("{base}\n\n{block}");
        }
    }
    base.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize, tag: &str) -> String {
        (0..n).map(|i| format!("{tag}{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn short_doc_is_one_chunk() {
        let mut idx = KnowledgeIndex::default();
        assert_eq!(idx.ingest("a", "A short paragraph about UMi.").unwrap(), 1);
    }

    #[test]
    fn exact_double_window_without_overlap() {
        // 1024 words, window 512, overlap 0: [0,512) and [512,1024)
        let policy = ChunkingPolicy {
            chunk_size: 512,
            overlap: 0,
        };
        let mut idx = KnowledgeIndex::new(policy, Bm25Params::default());
        assert_eq!(idx.ingest("d", &words(1024, "w")).unwrap(), 2);
    }

    #[test]
    fn overlap_windows() {
        // 1024 words, window 512, overlap 64: starts at 0, 448, 896
        let spans = chunk_spans(&words(1024, "w"), ChunkingPolicy::default());
        assert_eq!(spans.len(), 3);
    }

    #[test]
    fn prefers_paragraph_boundaries() {
        let doc = format!("{}\n\n{}", words(300, "a"), words(300, "b"));
        let policy = ChunkingPolicy::default();
        let spans = chunk_spans(&doc, policy);
        assert_eq!(spans.len(), 2);
        assert!(doc[spans[0].0..spans[0].1].ends_with("a299"));
        // the second window starts 64 words before the boundary
        assert!(doc[spans[1].0..].starts_with("a236"));
    }

    #[test]
    fn reingest_retires_old_ids() {
        let mut idx = KnowledgeIndex::default();
        idx.ingest("d", "first version").unwrap();
        let old: Vec<_> = idx.chunks().map(|c| c.chunk_id.clone()).collect();
        assert_eq!(idx.ingest("d", "second version").unwrap(), 1);
        assert_eq!(idx.chunk_count(), 1);
        assert!(old.iter().all(|id| idx.chunk(id).is_none()));
        assert!(idx.query("first", 5).unwrap().is_empty());
        assert_eq!(idx.query("second", 5).unwrap().len(), 1);
    }

    #[test]
    fn empty_inputs() {
        let mut idx = KnowledgeIndex::default();
        assert!(matches!(idx.ingest("x", "  \n"), Err(RetrievalError::EmptyDocument(_))));
        assert!(matches!(idx.query("umi", 3), Err(RetrievalError::EmptyIndex)));
        idx.ingest("x", "text").unwrap();
        assert!(matches!(idx.query("umi", 0), Err(RetrievalError::InvalidK)));
    }

    #[test]
    fn saturation_and_no_match() {
        let mut idx = KnowledgeIndex::default();
        idx.ingest("a", "umi channel").unwrap();
        idx.ingest("b", "uma channel").unwrap();
        let hits = idx.query("channel", 10).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), vec![1, 2]);
        assert!(idx.query("zigbee", 10).unwrap().is_empty());
    }

    #[test]
    fn heading_paths() {
        let mut idx = KnowledgeIndex::default();
        idx.ingest("h", "# Channel models\n## UMi\nStreet canyon text.").unwrap();
        let c = idx.chunks().next().unwrap();
        assert!(c.heading_path.is_empty() || c.heading_path[0] == "Channel models");
    }

    #[test]
    fn augment_identity_with_no_hits() {
        assert_eq!(augment_prompt("base prompt", &[], 100), "base prompt");
    }

    fn ctx(rank: u32, doc: &str, text: &str) -> ContextChunk {
        ContextChunk {
            rank,
            chunk_id: format!("{doc}@1#0000"),
            doc_id: doc.into(),
            score: 1.0,
            text: text.into(),
        }
    }

    #[test]
    fn augment_lists_hits_in_rank_order() {
        let out = augment_prompt("Q?", &[ctx(2, "beta", "second"), ctx(1, "alpha", "first")], 1000);
        let expected = "Q?\n\n### Reference context\n[1] source: alpha (alpha@1#0000)\nfirst\n\n[2] source: beta (beta@1#0000)\nsecond\n\n### End of reference context";
        assert_eq!(out, expected);
    }

    #[test]
    fn augment_drops_lowest_ranks_whole() {
        // base: 1 word; header lines: 3 + 3 words each per chunk + 4 + 5 for
        // the delimiters; chunk bodies 10 words each.
        let body = words(10, "t");
        let hits = [ctx(1, "a", &body), ctx(2, "b", &body)];
        let one = augment_prompt("Q", &hits[..1], 1000);
        let one_words = word_count(&one);
        assert_eq!(one_words, 1 + 3 + 4 + 10 + 5);
        let out = augment_prompt("Q", &hits, one_words);
        assert_eq!(out, one);
        assert!(!out.contains("[2]"));
        assert_eq!(augment_prompt("Q", &hits, 5), "Q");
    }

    #[test]
    fn persistence_round_trip() {
        let mut idx = KnowledgeIndex::default();
        idx.ingest("a", "UMi street canyon").unwrap();
        idx.ingest("b", "UMa macro cell").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("index.json");
        idx.save(&p).unwrap();
        let back = KnowledgeIndex::load(&p).unwrap();
        assert_eq!(idx.query("umi macro", 5).unwrap(), back.query("umi macro", 5).unwrap());
    }
}
