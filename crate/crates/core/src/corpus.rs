//! Corpus files: GLUE-style TSV with a header line, or line-delimited JSON
//! records. A document remembers its layout so the sanitized copy is written
//! back in the same shape.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{tokenize, Token};

const TEXT_COLUMNS: &[&str] = &[
    "sentence", "question", "sentence1", "sentence2", "text", "text_a", "text_b", "premise",
    "hypothesis",
];
const ID_COLUMNS: &[&str] = &["index", "idx", "id", "record_id"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub record_id: String,
    /// One text field for single-sentence tasks, two for sentence pairs.
    pub fields: Vec<String>,
    pub label: Option<String>,
    /// Raw TSV cells, kept so untouched columns are written back verbatim.
    row: Vec<String>,
}

impl Record {
    pub fn new(record_id: impl Into<String>, fields: Vec<String>, label: Option<String>) -> Self {
        Record {
            record_id: record_id.into(),
            fields,
            label,
            row: Vec::new(),
        }
    }

    pub fn field_tokens(&self) -> Vec<Vec<Token>> {
        self.fields.iter().map(|f| tokenize(f)).collect()
    }

    /// Surface forms of all fields, concatenated in field order.
    pub fn tokens(&self) -> Vec<String> {
        self.fields
            .iter()
            .flat_map(|f| tokenize(f).into_iter().map(|t| t.text))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Layout {
    Tsv {
        header: Vec<String>,
        text_cols: Vec<usize>,
        newline: &'static str,
        trailing_newline: bool,
    },
    Jsonl,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub records: Vec<Record>,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    record_id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

impl Document {
    /// An in-memory corpus written as JSON lines.
    pub fn from_records(records: Vec<Record>) -> Result<Self> {
        check_unique(&records)?;
        Ok(Document {
            records,
            layout: Layout::Jsonl,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let jsonl = match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json") => true,
            Some("tsv") => false,
            _ => text.trim_start().starts_with('{'),
        };
        if jsonl {
            Self::parse_jsonl(&text, path)
        } else {
            Self::parse_tsv(&text, path)
        }
    }

    pub fn parse_jsonl(text: &str, path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: JsonRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
                path: path.to_owned(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            let mut fields = vec![r.text];
            fields.extend(r.text_b);
            records.push(Record::new(r.record_id, fields, r.label));
        }
        Self::from_records(records)
    }

    pub fn parse_tsv(text: &str, path: &Path) -> Result<Self> {
        let malformed = |line: usize, msg: String| Error::Malformed {
            path: path.to_owned(),
            line,
            msg,
        };
        let newline = if text.contains("\r\n") { "\r\n" } else { "\n" };
        let trailing_newline = text.ends_with('\n');
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| malformed(1, "missing header line".into()))?
            .split('\t')
            .map(str::to_owned)
            .collect();
        let find = |names: &[&str]| {
            header
                .iter()
                .position(|h| names.contains(&h.trim().to_ascii_lowercase().as_str()))
        };
        let text_cols: Vec<usize> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| TEXT_COLUMNS.contains(&h.trim().to_ascii_lowercase().as_str()))
            .map(|(i, _)| i)
            .collect();
        if text_cols.is_empty() || text_cols.len() > 2 {
            return Err(malformed(
                1,
                format!("expected one or two text columns, header is {header:?}"),
            ));
        }
        let id_col = find(ID_COLUMNS);
        let label_col = find(&["label"]);

        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<String> = line.split('\t').map(str::to_owned).collect();
            if row.len() != header.len() {
                return Err(malformed(
                    i + 2,
                    format!("{} columns, header has {}", row.len(), header.len()),
                ));
            }
            let record_id = id_col.map_or_else(|| i.to_string(), |c| row[c].clone());
            records.push(Record {
                record_id,
                fields: text_cols.iter().map(|&c| row[c].clone()).collect(),
                label: label_col.map(|c| row[c].clone()),
                row,
            });
        }
        check_unique(&records)?;
        Ok(Document {
            records,
            layout: Layout::Tsv {
                header,
                text_cols,
                newline,
                trailing_newline,
            },
        })
    }

    /// Same layout, new records.
    pub fn with_records(&self, records: Vec<Record>) -> Self {
        Document {
            records,
            layout: self.layout.clone(),
        }
    }

    pub fn is_tsv(&self) -> bool {
        matches!(self.layout, Layout::Tsv { .. })
    }

    pub fn to_string_lossless(&self) -> Result<String> {
        let mut out = String::new();
        match &self.layout {
            Layout::Tsv {
                header,
                text_cols,
                newline,
                trailing_newline,
            } => {
                let mut lines = vec![header.join("\t")];
                for r in &self.records {
                    let mut row = if r.row.is_empty() {
                        vec![String::new(); header.len()]
                    } else {
                        r.row.clone()
                    };
                    for (&c, f) in text_cols.iter().zip(&r.fields) {
                        row[c] = f.clone();
                    }
                    lines.push(row.join("\t"));
                }
                out.push_str(&lines.join(newline));
                if *trailing_newline {
                    out.push_str(newline);
                }
            }
            Layout::Jsonl => {
                for r in &self.records {
                    let j = JsonRecord {
                        record_id: r.record_id.clone(),
                        text: r.fields.first().cloned().unwrap_or_default(),
                        text_b: r.fields.get(1).cloned(),
                        label: r.label.clone(),
                    };
                    out.push_str(&serde_json::to_string(&j)?);
                    out.push('\n');
                }
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_string_lossless()?).map_err(|e| Error::io(path, e))
    }
}

fn check_unique(records: &[Record]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.record_id.as_str()) {
            return Err(Error::DuplicateRecord(r.record_id.clone()));
        }
    }
    Ok(())
}
