//! Loading labeled utterance datasets and normalizing transcripts into tokens.
//!
//! Two on-disk layouts are accepted:
//!
//! * delimited columns with a header row naming `id`, `transcript` and
//!   `label` (comma- or tab-separated; the delimiter is taken from the header
//!   line),
//! * line-delimited JSON records with fields `id` (optional), `text` and
//!   `label`.
//!
//! Examples whose transcript normalizes to zero tokens are dropped and listed
//! in the dataset's [`LoadSummary`].

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transcript normalization switches. Recorded into every dataset so reports
/// can be regenerated from the raw file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalizationPolicy {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    /// Split on any run of Unicode whitespace. When off, only the ASCII space
    /// separates tokens and tabs or newlines stay inside tokens.
    pub collapse_whitespace: bool,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            collapse_whitespace: true,
        }
    }
}

/// Turns raw text into a token sequence under `policy`.
///
/// Punctuation stripping removes every character that is neither alphanumeric
/// nor whitespace, so `"don't"` becomes `"dont"`.
pub fn normalize(text: &str, policy: &NormalizationPolicy) -> Vec<String> {
    let cased = if policy.lowercase {
        text.to_lowercase()
    } else {
        text.to_owned()
    };
    let cleaned: String = if policy.strip_punctuation {
        cased
            .chars()
            .filter(|c| c.is_alphanumeric() || c.is_whitespace())
            .collect()
    } else {
        cased
    };
    if policy.collapse_whitespace {
        cleaned.split_whitespace().map(str::to_owned).collect()
    } else {
        cleaned
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect()
    }
}

/// One labeled utterance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub transcript: String,
    pub tokens: Vec<String>,
    pub label: String,
}

/// On-disk dataset layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    DelimitedColumns,
    LineDelimitedRecords,
}

impl InputFormat {
    /// Guesses the layout from the file extension: `.jsonl`, `.ndjson` and
    /// `.json` are records, everything else is delimited columns.
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("jsonl" | "ndjson" | "json") => InputFormat::LineDelimitedRecords,
            _ => InputFormat::DelimitedColumns,
        }
    }
}

/// A record that was discarded because its transcript had no tokens left.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRecord {
    pub line: usize,
    pub id: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub records_read: usize,
    pub dropped_empty: Vec<DroppedRecord>,
}

/// An immutable, ordered collection of labeled examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<Example>,
    policy: NormalizationPolicy,
    source_path: String,
    summary: LoadSummary,
}

impl Dataset {
    /// Builds a dataset from `(id, transcript, label)` triples, normalizing
    /// each transcript. Empty-token transcripts are dropped into the summary.
    pub fn from_records<I, S1, S2, S3>(
        records: I,
        policy: NormalizationPolicy,
        source: impl Into<String>,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (S1, S2, S3)>,
        S1: Into<String>,
        S2: Into<String>,
        S3: Into<String>,
    {
        let source = source.into();
        let mut builder = Builder::new(policy);
        for (line, (id, text, label)) in records.into_iter().enumerate() {
            builder.push(line, id.into(), text.into(), label.into(), &source)?;
        }
        builder.finish(source)
    }

    /// Convenience constructor for in-memory fixtures; ids are the
    /// zero-based positions.
    pub fn from_pairs(pairs: &[(&str, &str)], policy: NormalizationPolicy) -> Result<Self> {
        Self::from_records(
            pairs
                .iter()
                .enumerate()
                .map(|(i, (t, l))| (i.to_string(), *t, *l)),
            policy,
            "<memory>",
        )
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn policy(&self) -> &NormalizationPolicy {
        &self.policy
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    pub fn summary(&self) -> &LoadSummary {
        &self.summary
    }

    pub fn ids(&self) -> Vec<String> {
        self.examples.iter().map(|e| e.id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.examples.iter().map(|e| e.label.as_str()).collect()
    }

    pub fn distinct_label_count(&self) -> usize {
        self.examples
            .iter()
            .map(|e| e.label.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    /// Returns the sub-dataset made of the examples at `indices` (in the
    /// given order). Indices must be in range.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            policy: self.policy,
            source_path: self.source_path.clone(),
            summary: self.summary.clone(),
        }
    }

    /// Keeps the examples for which `keep` returns true, preserving order.
    pub fn retain<F: FnMut(&Example) -> bool>(&self, mut keep: F) -> Dataset {
        Dataset {
            examples: self.examples.iter().filter(|e| keep(e)).cloned().collect(),
            policy: self.policy,
            source_path: self.source_path.clone(),
            summary: self.summary.clone(),
        }
    }

    /// Keeps examples whose id is in `ids`, preserving dataset order.
    pub fn restrict_to_ids(&self, ids: &[String]) -> Dataset {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        self.retain(|e| wanted.contains(e.id.as_str()))
    }

    /// Writes the examples as line-delimited records (`id`, `text`, `label`),
    /// loadable again with [`InputFormat::LineDelimitedRecords`].
    pub fn write_records(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for e in &self.examples {
            let rec = serde_json::json!({ "id": e.id, "text": e.transcript, "label": e.label });
            serde_json::to_writer(&mut out, &rec).expect("in-memory write");
            out.push(b'\n');
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }
}

struct Builder {
    policy: NormalizationPolicy,
    examples: Vec<Example>,
    seen: HashMap<String, usize>,
    summary: LoadSummary,
}

impl Builder {
    fn new(policy: NormalizationPolicy) -> Self {
        Self {
            policy,
            examples: Vec::new(),
            seen: HashMap::new(),
            summary: LoadSummary::default(),
        }
    }

    fn push(
        &mut self,
        line: usize,
        id: String,
        transcript: String,
        label: String,
        source: &str,
    ) -> Result<()> {
        self.summary.records_read += 1;
        if label.trim().is_empty() {
            return Err(Error::MalformedRecord {
                path: source.into(),
                line,
                reason: "empty label".into(),
            });
        }
        if let Some(&first) = self.seen.get(&id) {
            log::debug!("id {id:?} first seen at line {first}");
            return Err(Error::DuplicateId { id, line });
        }
        let tokens = normalize(&transcript, &self.policy);
        if tokens.is_empty() {
            log::info!("{source}:{line}: dropping example {id:?} with empty transcript");
            self.summary.dropped_empty.push(DroppedRecord { line, id });
            return Ok(());
        }
        self.seen.insert(id.clone(), line);
        self.examples.push(Example {
            id,
            transcript,
            tokens,
            label,
        });
        Ok(())
    }

    fn finish(self, source: String) -> Result<Dataset> {
        if self.examples.is_empty() {
            return Err(Error::EmptyDataset {
                path: source.into(),
            });
        }
        Ok(Dataset {
            examples: self.examples,
            policy: self.policy,
            source_path: source,
            summary: self.summary,
        })
    }
}

/// Loads and normalizes a dataset file.
pub fn load_dataset(
    path: &Path,
    format: InputFormat,
    policy: NormalizationPolicy,
) -> Result<Dataset> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(raw).map_err(|e| Error::MalformedRecord {
        path: path.into(),
        line: 0,
        reason: format!("invalid UTF-8: {e}"),
    })?;
    let source = path.display().to_string();
    let mut builder = Builder::new(policy);
    match format {
        InputFormat::DelimitedColumns => read_delimited(&text, path, &source, &mut builder)?,
        InputFormat::LineDelimitedRecords => read_records(&text, path, &source, &mut builder)?,
    }
    builder.finish(source)
}

fn column(headers: &[String], names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
}

fn read_delimited(text: &str, path: &Path, source: &str, builder: &mut Builder) -> Result<()> {
    let header_line = text.lines().next().unwrap_or_default();
    let delimiter = if header_line.contains('\t') {
        b'\t'
    } else {
        b','
    };
    let malformed = |line: usize, reason: String| Error::MalformedRecord {
        path: PathBuf::from(path),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_owned())
        .collect();
    let id_col = column(&headers, &["id"]);
    let text_col = column(&headers, &["transcript", "text", "transcription"])
        .ok_or_else(|| malformed(1, "header has no transcript column".into()))?;
    // Without a label column, an action/object/location slot triple (as in
    // Fluent Speech Commands) forms the intent.
    let label_cols = match column(&headers, &["label", "intent"]) {
        Some(col) => vec![col],
        None => ["action", "object", "location"]
            .iter()
            .map(|name| column(&headers, &[name]))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| malformed(1, "header has no label column".into()))?,
    };

    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(index + 2);
            malformed(line, e.to_string())
        })?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(index + 2);
        let field = |col: usize, name: &str| {
            record
                .get(col)
                .map(str::to_owned)
                .ok_or_else(|| malformed(line, format!("missing {name} field")))
        };
        let id = match id_col {
            Some(col) => {
                let id = field(col, "id")?;
                if id.is_empty() {
                    index.to_string()
                } else {
                    id
                }
            }
            None => index.to_string(),
        };
        let transcript = field(text_col, "transcript")?;
        let label = label_cols
            .iter()
            .map(|&col| field(col, "label"))
            .collect::<Result<Vec<_>>>()?
            .join("_");
        builder.push(line, id, transcript, label, source)?;
    }
    Ok(())
}

fn read_records(text: &str, path: &Path, source: &str, builder: &mut Builder) -> Result<()> {
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRecord {
            path: PathBuf::from(path),
            line,
            reason,
        };
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("record is not an object".into()))?;
        let id = match obj.get("id") {
            None | Some(serde_json::Value::Null) => index.to_string(),
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            Some(other) => return Err(malformed(format!("unsupported id value {other}"))),
        };
        let string_field = |name: &str| match obj.get(name) {
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(malformed(format!("field {name:?} is not a string"))),
            None => Err(malformed(format!("missing field {name:?}"))),
        };
        let transcript = string_field("text")?;
        let label = string_field("label")?;
        builder.push(line, id, transcript, label, source)?;
    }
    Ok(())
}

/// Keeps the first example of each distinct `(tokens, label)` pair.
pub fn unique_examples(d: &Dataset) -> Dataset {
    let mut seen: HashSet<(&[String], &str)> = HashSet::new();
    let keep: Vec<usize> = d
        .examples
        .iter()
        .enumerate()
        .filter(|(_, e)| seen.insert((e.tokens.as_slice(), e.label.as_str())))
        .map(|(i, _)| i)
        .collect();
    d.select(&keep)
}
