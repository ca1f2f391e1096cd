//! Vocabulary, click-log, and embedding file loaders plus concept matching.
//!
//! File formats are UTF-8, TSV, LF line endings; lines starting with `#`
//! are comments. Every surface is normalized on the way in.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize;

/// Dense index into a [`ConceptVocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConceptId(pub usize);

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct Concept {
    pub id: ConceptId,
    pub surface: String,
}

/// Ordered list of concepts with a surface index that inverts it exactly.
#[derive(Debug, Clone, Default)]
pub struct ConceptVocabulary {
    concepts: Vec<Concept>,
    index: HashMap<String, ConceptId>,
}

impl ConceptVocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    /// Insert a normalized surface, returning its id; errors on duplicates.
    pub fn insert(&mut self, surface: String) -> Result<ConceptId> {
        debug_assert_eq!(surface, normalize(&surface));
        if self.index.contains_key(&surface) {
            return Err(Error::DuplicateConcept { line: 0, surface });
        }
        let id = ConceptId(self.concepts.len());
        self.index.insert(surface.clone(), id);
        self.concepts.push(Concept { id, surface });
        Ok(id)
    }

    /// Id for an already-inserted surface, or insert and return the new id.
    pub fn get_or_insert(&mut self, surface: &str) -> ConceptId {
        match self.index.get(surface) {
            Some(&id) => id,
            None => self
                .insert(surface.to_string())
                .expect("absence checked above"),
        }
    }

    pub fn lookup(&self, normalized_surface: &str) -> Option<ConceptId> {
        self.index.get(normalized_surface).copied()
    }

    pub fn surface(&self, id: ConceptId) -> &str {
        &self.concepts[id.0].surface
    }

    pub fn contains_id(&self, id: ConceptId) -> bool {
        id.0 < self.concepts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.iter()
    }
}

/// One aggregated click-log record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub query: String,
    pub item_text: String,
    pub count: u64,
}

/// One concept per line. Duplicates after normalization are rejected with
/// their line number; blank lines and `#` comments are skipped.
pub fn load_vocabulary(path: &Path) -> Result<ConceptVocabulary> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut vocab = ConceptVocabulary::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let surface = normalize(raw);
        if surface.is_empty() {
            return Err(Error::EmptyConcept { line });
        }
        if vocab.lookup(&surface).is_some() {
            return Err(Error::DuplicateConcept { line, surface });
        }
        vocab.insert(surface)?;
    }
    Ok(vocab)
}

/// TSV `query<TAB>item_text[<TAB>count]`; missing count defaults to 1.
/// Records with identical normalized (query, item_text) are merged by
/// summing counts; output is sorted by (query, item_text).
pub fn load_click_log(path: &Path) -> Result<Vec<ClickRecord>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut merged: BTreeMap<(String, String), u64> = BTreeMap::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::MalformedLine {
                line,
                message: format!("expected 2 or 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let query = normalize(fields[0]);
        let item_text = normalize(fields[1]);
        if query.is_empty() || item_text.is_empty() {
            return Err(Error::MalformedLine {
                line,
                message: "query and item text must be non-empty".to_string(),
            });
        }
        let count: i64 = match fields.get(2) {
            None => 1,
            Some(s) => s.trim().parse().map_err(|_| Error::MalformedLine {
                line,
                message: format!("count {s:?} is not an integer"),
            })?,
        };
        if count < 1 {
            return Err(Error::NonPositiveCount { line, value: count });
        }
        *merged.entry((query, item_text)).or_insert(0) += count as u64;
    }
    Ok(merged
        .into_iter()
        .map(|((query, item_text), count)| ClickRecord {
            query,
            item_text,
            count,
        })
        .collect())
}

/// Longest vocabulary surface (at least 2 chars) contained in `item_text`.
/// Ties break to the rightmost start offset, then the smallest concept id.
pub fn match_concept(item_text: &str, vocab: &ConceptVocabulary) -> Option<ConceptId> {
    // best = (char_len, start_char_offset, Reverse(id)) maximized lexicographically
    let mut best: Option<(usize, usize, ConceptId)> = None;
    for concept in vocab.iter() {
        let surface = &concept.surface;
        let char_len = surface.chars().count();
        if char_len < 2 {
            continue;
        }
        let Some(byte_start) = item_text.rfind(surface.as_str()) else {
            continue;
        };
        let start = item_text[..byte_start].chars().count();
        let better = match &best {
            None => true,
            Some((blen, bstart, bid)) => {
                (char_len, start) > (*blen, *bstart)
                    || ((char_len, start) == (*blen, *bstart) && concept.id < *bid)
            }
        };
        if better {
            best = Some((char_len, start, concept.id));
        }
    }
    best.map(|(_, _, id)| id)
}

/// Concept vectors loaded from a text embedding file.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<ConceptId, Vec<f64>>,
    /// File surfaces that resolved to no vocabulary concept.
    pub unmatched: Vec<String>,
    /// Vocabulary concepts with no vector in the file.
    pub missing: Vec<ConceptId>,
}

/// Header line `n dim`, then `surface<TAB>f1 f2 ... f_dim`.
pub fn load_embeddings(path: &Path, vocab: &ConceptVocabulary) -> Result<EmbeddingTable> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = content.lines().enumerate().filter(|(_, l)| {
        let t = l.trim_start();
        !l.is_empty() && !t.starts_with('#')
    });
    let (_, header) = lines.next().ok_or_else(|| Error::MalformedHeader {
        message: "file is empty".to_string(),
    })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::MalformedHeader {
            message: format!("expected `n dim`, found {header:?}"),
        });
    }
    let rows: usize = parts[0].parse().map_err(|_| Error::MalformedHeader {
        message: format!("row count {:?} is not an integer", parts[0]),
    })?;
    let dim: usize = parts[1].parse().map_err(|_| Error::MalformedHeader {
        message: format!("dimension {:?} is not an integer", parts[1]),
    })?;
    if dim == 0 {
        return Err(Error::MalformedHeader {
            message: "dimension must be positive".to_string(),
        });
    }

    let mut vectors: BTreeMap<ConceptId, Vec<f64>> = BTreeMap::new();
    let mut unmatched = Vec::new();
    let mut seen = 0usize;
    for (idx, raw) in lines {
        let line = idx + 1;
        seen += 1;
        let (surface_raw, rest) = raw.split_once('\t').ok_or_else(|| Error::MalformedLine {
            line,
            message: "expected `surface<TAB>values`".to_string(),
        })?;
        let values: Vec<f64> = rest
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>().map_err(|_| Error::MalformedLine {
                    line,
                    message: format!("value {v:?} is not a float"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::DimensionMismatch {
                line,
                expected: dim,
                found: values.len(),
            });
        }
        let surface = normalize(surface_raw);
        match vocab.lookup(&surface) {
            Some(id) => {
                vectors.insert(id, values);
            }
            None => unmatched.push(surface),
        }
    }
    if seen != rows {
        return Err(Error::MalformedHeader {
            message: format!("header declares {rows} rows, file has {seen}"),
        });
    }
    let missing = vocab
        .iter()
        .filter(|c| !vectors.contains_key(&c.id))
        .map(|c| c.id)
        .collect();
    Ok(EmbeddingTable {
        dim,
        vectors,
        unmatched,
        missing,
    })
}

/// Inverse of [`load_embeddings`]; floats use shortest round-trip formatting.
pub fn write_embeddings(
    path: &Path,
    vocab: &ConceptVocabulary,
    vectors: &BTreeMap<ConceptId, Vec<f64>>,
    dim: usize,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", vectors.len(), dim));
    for (id, vec) in vectors {
        out.push_str(vocab.surface(*id));
        out.push('\t');
        for (i, v) in vec.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    let mut f =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}
