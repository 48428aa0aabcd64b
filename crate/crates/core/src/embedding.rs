//! Embedding data model and CSV interchange.
//!
//! An [`EmbeddingSet`] is the universal currency of the toolkit: a labeled
//! collection of fixed-dimension utterance embeddings. The one interchange
//! format is a plain CSV with header `utt_id,spk_id,partition,dim_0,...`,
//! UTF-8, LF line endings, and no quoting (identifiers are restricted to
//! `[A-Za-z0-9_.-]+`). Floats are serialized with the shortest representation
//! that round-trips exactly, so `save` followed by `load` is value-exact and
//! `save ∘ load ∘ save` is byte-idempotent.
//!
//! All types here are immutable after construction and all operations are
//! pure functions, so everything is safe to share and call across threads.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One labeled utterance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub spk_id: String,
    pub partition: String,
    pub vector: Vec<f64>,
}

impl UtteranceRecord {
    pub fn new(
        utt_id: impl Into<String>,
        spk_id: impl Into<String>,
        partition: impl Into<String>,
        vector: Vec<f64>,
    ) -> Self {
        Self {
            utt_id: utt_id.into(),
            spk_id: spk_id.into(),
            partition: partition.into(),
            vector,
        }
    }
}

/// Validated, immutable collection of utterance embeddings sharing one
/// dimensionality.
///
/// May be empty: partition filters legitimately produce empty subsets, and
/// callers decide whether that is an error. Operations that need data
/// (saving, summaries, scatter, trials) enforce non-emptiness themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    records: Vec<UtteranceRecord>,
}

/// Per-speaker utterance count and mean vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerSummary {
    pub spk_id: String,
    pub count: usize,
    pub mean: Vec<f64>,
}

fn valid_id(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'.' || b == b'-')
}

fn check_id(field: &'static str, id: &str, row: Option<usize>) -> Result<()> {
    if valid_id(id) {
        Ok(())
    } else {
        Err(Error::BadIdentifier {
            field,
            id: id.to_string(),
            row,
        })
    }
}

impl EmbeddingSet {
    /// Build a set from records, validating every invariant: vector lengths
    /// equal `dim`, coordinates finite, `utt_id`s unique, identifiers within
    /// the interchange charset.
    pub fn new(dim: usize, records: Vec<UtteranceRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid_config("dim", "must be at least 1"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for rec in &records {
            check_id("utt_id", &rec.utt_id, None)?;
            check_id("spk_id", &rec.spk_id, None)?;
            check_id("partition", &rec.partition, None)?;
            if rec.vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: rec.vector.len(),
                });
            }
            if let Some(&bad) = rec.vector.iter().find(|c| !c.is_finite()) {
                return Err(Error::NonFiniteCoordinate {
                    row: None,
                    value: bad,
                });
            }
            if !seen.insert(rec.utt_id.as_str()) {
                return Err(Error::DuplicateUttId {
                    row: None,
                    utt_id: rec.utt_id.clone(),
                });
            }
        }
        Ok(Self { dim, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct speaker ids, sorted lexicographically by bytes.
    pub fn speaker_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .records
            .iter()
            .map(|r| r.spk_id.as_str())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn speaker_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.spk_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    /// Distinct partition labels, sorted.
    pub fn partition_labels(&self) -> Vec<&str> {
        let mut labels: Vec<&str> = self
            .records
            .iter()
            .map(|r| r.partition.as_str())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        labels.sort_unstable();
        labels
    }

    /// One summary per distinct speaker, sorted by `spk_id`; counts sum to
    /// the record count. Means are plain arithmetic means in record order.
    pub fn speaker_summaries(&self) -> Result<Vec<SpeakerSummary>> {
        if self.records.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut acc: BTreeMap<&str, (usize, Vec<f64>)> = BTreeMap::new();
        for rec in &self.records {
            let entry = acc
                .entry(rec.spk_id.as_str())
                .or_insert_with(|| (0, vec![0.0; self.dim]));
            entry.0 += 1;
            for (a, x) in entry.1.iter_mut().zip(&rec.vector) {
                *a += x;
            }
        }
        Ok(acc
            .into_iter()
            .map(|(spk, (count, mut sum))| {
                for a in &mut sum {
                    *a /= count as f64;
                }
                SpeakerSummary {
                    spk_id: spk.to_string(),
                    count,
                    mean: sum,
                }
            })
            .collect())
    }

    /// Subset with the given partition label, order preserved. May be empty.
    pub fn filter_partition(&self, partition: &str) -> EmbeddingSet {
        EmbeddingSet {
            dim: self.dim,
            records: self
                .records
                .iter()
                .filter(|r| r.partition == partition)
                .cloned()
                .collect(),
        }
    }

    /// Every vector scaled to unit Euclidean norm.
    pub fn length_normalized(&self) -> Result<EmbeddingSet> {
        let records = self
            .records
            .iter()
            .map(|rec| {
                let norm = norm2(&rec.vector);
                if norm == 0.0 {
                    return Err(Error::ZeroNorm {
                        utt_id: rec.utt_id.clone(),
                    });
                }
                let mut rec = rec.clone();
                for c in &mut rec.vector {
                    *c /= norm;
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingSet {
            dim: self.dim,
            records,
        })
    }

    /// Parse the CSV interchange format from a string.
    ///
    /// Row numbers in errors are 1-based file lines; the header is row 1.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        parse_csv(text, Path::new("<input>"))
    }

    /// Canonical CSV rendering. Deterministic bytes for a given set.
    pub fn to_csv_string(&self) -> Result<String> {
        if self.records.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut out = String::new();
        out.push_str("utt_id,spk_id,partition");
        for i in 0..self.dim {
            // The default float Display is the shortest exact round-trip form.
            let _ = write!(out, ",dim_{i}");
        }
        out.push('\n');
        for rec in &self.records {
            let _ = write!(out, "{},{},{}", rec.utt_id, rec.spk_id, rec.partition);
            for c in &rec.vector {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        Ok(out)
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Load an [`EmbeddingSet`] from a CSV file. Row order is preserved.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

/// Write the canonical CSV for `set` to `path` atomically (temp file in the
/// same directory, rename on success).
pub fn save_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let csv = set.to_csv_string()?;
    write_atomic(path.as_ref(), csv.as_bytes())
}

/// Atomic file write: contents land under the final name only when complete.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))
        .map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn parse_csv(text: &str, origin: &Path) -> Result<EmbeddingSet> {
    let mut lines = text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::EmptyFile {
        path: origin.to_path_buf(),
    })?;
    if header.is_empty() {
        return Err(Error::MalformedHeader {
            detail: "first line is empty".to_string(),
        });
    }

    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() < 4 {
        return Err(Error::MalformedHeader {
            detail: format!("expected at least 4 columns, got {}", fields.len()),
        });
    }
    if fields[0] != "utt_id" || fields[1] != "spk_id" || fields[2] != "partition" {
        return Err(Error::MalformedHeader {
            detail: format!(
                "expected leading columns utt_id,spk_id,partition, got {},{},{}",
                fields[0], fields[1], fields[2]
            ),
        });
    }
    let dim = fields.len() - 3;
    for (i, f) in fields[3..].iter().enumerate() {
        let expected = format!("dim_{i}");
        if *f != expected {
            return Err(Error::MalformedHeader {
                detail: format!("expected column {expected}, got {f}"),
            });
        }
    }

    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let row = idx + 1; // 1-based file line
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != dim + 3 {
            return Err(Error::RowWidth {
                row,
                expected: dim + 3,
                got: parts.len(),
            });
        }
        check_id("utt_id", parts[0], Some(row))?;
        check_id("spk_id", parts[1], Some(row))?;
        check_id("partition", parts[2], Some(row))?;
        if !seen.insert(parts[0].to_string()) {
            return Err(Error::DuplicateUttId {
                row: Some(row),
                utt_id: parts[0].to_string(),
            });
        }
        let mut vector = Vec::with_capacity(dim);
        for raw in &parts[3..] {
            let value: f64 = raw.parse().map_err(|_| Error::BadCoordinate {
                row,
                value: (*raw).to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonFiniteCoordinate {
                    row: Some(row),
                    value,
                });
            }
            vector.push(value);
        }
        records.push(UtteranceRecord::new(parts[0], parts[1], parts[2], vector));
    }
    if records.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(EmbeddingSet { dim, records })
}
