use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{remap_stars, Label, LabeledExample, Source};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    /// `{"text": .., "label": "positive|negative|neutral", "source"?: ..}` per line.
    Jsonl,
    /// CSV with header `stars,text`; stars 1-5 are remapped to labels.
    StarCsv,
}

impl DatasetFormat {
    /// `.csv` files are star ratings, everything else JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => DatasetFormat::StarCsv,
            _ => DatasetFormat::Jsonl,
        }
    }
}

/// Parsed rows plus the number of rows that were skipped.
#[derive(Clone, Debug)]
pub struct Loaded<T> {
    pub rows: Vec<T>,
    pub malformed: usize,
}

#[derive(Deserialize)]
struct JsonRow {
    text: String,
    label: String,
    #[serde(default)]
    source: Option<String>,
}

#[derive(Serialize)]
struct JsonRowOut<'a> {
    text: &'a str,
    label: &'a str,
    source: &'a str,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn finish<T>(path: &Path, rows: Vec<T>, malformed: usize) -> Result<Loaded<T>> {
    let total = rows.len() + malformed;
    if malformed * 10 > total {
        return Err(Error::TooManyMalformed {
            path: path.to_path_buf(),
            malformed,
            total,
        });
    }
    if total == 0 {
        log::warn!("{}: no rows", path.display());
    } else if malformed > 0 {
        log::warn!("{}: skipped {malformed} malformed of {total} rows", path.display());
    }
    Ok(Loaded { rows, malformed })
}

fn default_source(path: &Path) -> Source {
    Source::parse(path.file_stem().and_then(|s| s.to_str()).unwrap_or("unspecified"))
}

/// Reads a labeled dataset. Rows without a `source` are tagged with the
/// file stem. More than 10% malformed rows is an error.
pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Loaded<LabeledExample>> {
    let path = path.as_ref();
    let fallback = default_source(path);
    let text = read(path)?;
    let mut rows = Vec::new();
    let mut malformed = 0;
    match format {
        DatasetFormat::Jsonl => {
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<JsonRow>(line)
                    .map_err(Error::from)
                    .and_then(|r| {
                        let label: Label = r.label.parse()?;
                        let source = r.source.as_deref().map(Source::parse).unwrap_or_else(|| fallback.clone());
                        LabeledExample::new(r.text, label, source)
                    });
                match parsed {
                    Ok(ex) => rows.push(ex),
                    Err(e) => {
                        log::debug!("{}:{}: {e}", path.display(), i + 1);
                        malformed += 1;
                    }
                }
            }
        }
        DatasetFormat::StarCsv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(true)
                .from_reader(text.as_bytes());
            let header_ok = rdr
                .headers()
                .map(|h| h.iter().map(str::trim).eq(["stars", "text"]))
                .unwrap_or(false);
            for (i, rec) in rdr.records().enumerate() {
                let parsed = rec
                    .map_err(|e| Error::InvalidConfig(e.to_string()))
                    .and_then(|r| {
                        if !header_ok || r.len() != 2 {
                            return Err(Error::InvalidConfig("expected `stars,text`".into()));
                        }
                        let stars: i64 = r[0]
                            .trim()
                            .parse()
                            .map_err(|_| Error::InvalidConfig(format!("bad star value `{}`", &r[0])))?;
                        let label = remap_stars(i, stars)?;
                        LabeledExample::new(&r[1], label, fallback.clone())
                    });
                match parsed {
                    Ok(ex) => rows.push(ex),
                    Err(e) => {
                        log::debug!("{} record {i}: {e}", path.display());
                        malformed += 1;
                    }
                }
            }
            if !header_ok && rows.is_empty() && malformed == 0 && !text.trim().is_empty() {
                malformed = 1;
            }
        }
    }
    finish(path, rows, malformed)
}

/// Writes examples as JSONL with keys `text`, `label`, `source`.
pub fn write_jsonl<W: Write>(mut out: W, examples: &[LabeledExample]) -> Result<()> {
    for e in examples {
        let row = JsonRowOut {
            text: &e.text,
            label: e.label.name(),
            source: e.source.tag(),
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n").map_err(|err| Error::io("<output>", err))?;
    }
    Ok(())
}

/// Unlabeled sentences: one per line, or the `text` field of JSONL rows
/// when the file has a `.jsonl` extension.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Loaded<String>> {
    let path = path.as_ref();
    let text = read(path)?;
    let jsonl = path.extension().and_then(|e| e.to_str()) == Some("jsonl");
    let mut rows = Vec::new();
    let mut malformed = 0;
    #[derive(Deserialize)]
    struct TextRow {
        text: String,
    }
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if jsonl {
            match serde_json::from_str::<TextRow>(line) {
                Ok(r) if !r.text.trim().is_empty() => rows.push(r.text),
                _ => malformed += 1,
            }
        } else {
            rows.push(line.trim().to_string());
        }
    }
    finish(path, rows, malformed)
}

/// Premise with an entailed and a contradicting hypothesis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub anchor: String,
    pub entailment: String,
    pub contradiction: String,
}

/// JSONL rows with keys `anchor`, `entailment`, `contradiction`; rows with a
/// missing or blank field are rejected.
pub fn load_triples(path: impl AsRef<Path>) -> Result<Loaded<Triple>> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut rows = Vec::new();
    let mut malformed = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<Triple>(line) {
            Ok(t) if [&t.anchor, &t.entailment, &t.contradiction].iter().all(|s| !s.trim().is_empty()) => {
                rows.push(t)
            }
            _ => malformed += 1,
        }
    }
    finish(path, rows, malformed)
}
