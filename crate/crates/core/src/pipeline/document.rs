//! Documents with gold annotations and their JSONL form.
//!
//! On disk spans are 0-based, end-exclusive word offsets; in memory they are
//! 1-based inclusive [`Span`]s. `(start, end)` on disk maps to
//! `Span { start: start + 1, end }`, which is exact in both directions.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{io_err, json_err, CoreError, Result};
use crate::reader::Span;

/// Entity label of an out-of-knowledge-base mention.
pub const NME: &str = "NME";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GoldMention {
    pub span: Span,
    pub entity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GoldTriplet {
    pub subject: Span,
    pub object: Span,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub words: Vec<String>,
    pub mentions: Vec<GoldMention>,
    pub triplets: Vec<GoldTriplet>,
}

impl Document {
    pub fn validate(&self) -> Result<()> {
        let n = self.words.len();
        let check = |s: &Span| {
            if s.end > n {
                Err(CoreError::Validation(format!(
                    "document {}: span ({}, {}) beyond {} words",
                    self.doc_id, s.start, s.end, n
                )))
            } else {
                Ok(())
            }
        };
        for m in &self.mentions {
            check(&m.span)?;
        }
        for t in &self.triplets {
            check(&t.subject)?;
            check(&t.object)?;
        }
        Ok(())
    }

    /// Entity label of the gold mention at exactly `span`, if any.
    pub fn entity_at(&self, span: Span) -> Option<&str> {
        self.mentions.iter().find(|m| m.span == span).map(|m| m.entity.as_str())
    }
}

#[derive(Serialize, Deserialize)]
struct MentionRecord {
    start: usize,
    end: usize,
    entity: String,
}

#[derive(Serialize, Deserialize)]
struct TripletRecord {
    subj: [usize; 2],
    obj: [usize; 2],
    relation: String,
}

#[derive(Serialize, Deserialize)]
struct DocumentRecord {
    doc_id: String,
    words: Vec<String>,
    #[serde(default)]
    mentions: Vec<MentionRecord>,
    #[serde(default)]
    triplets: Vec<TripletRecord>,
}

pub(crate) fn span_from_disk(start: usize, end: usize) -> Result<Span> {
    if end <= start {
        return Err(CoreError::Validation(format!("empty or reversed span [{start}, {end})")));
    }
    Ok(Span { start: start + 1, end })
}

pub(crate) fn span_to_disk(s: Span) -> [usize; 2] {
    [s.start - 1, s.end]
}

impl TryFrom<DocumentRecord> for Document {
    type Error = CoreError;

    fn try_from(r: DocumentRecord) -> Result<Self> {
        let doc = Document {
            doc_id: r.doc_id,
            words: r.words,
            mentions: r
                .mentions
                .into_iter()
                .map(|m| Ok(GoldMention { span: span_from_disk(m.start, m.end)?, entity: m.entity }))
                .collect::<Result<_>>()?,
            triplets: r
                .triplets
                .into_iter()
                .map(|t| {
                    Ok(GoldTriplet {
                        subject: span_from_disk(t.subj[0], t.subj[1])?,
                        object: span_from_disk(t.obj[0], t.obj[1])?,
                        relation: t.relation,
                    })
                })
                .collect::<Result<_>>()?,
        };
        doc.validate()?;
        Ok(doc)
    }
}

impl From<&Document> for DocumentRecord {
    fn from(d: &Document) -> Self {
        DocumentRecord {
            doc_id: d.doc_id.clone(),
            words: d.words.clone(),
            mentions: d
                .mentions
                .iter()
                .map(|m| {
                    let [start, end] = span_to_disk(m.span);
                    MentionRecord { start, end, entity: m.entity.clone() }
                })
                .collect(),
            triplets: d
                .triplets
                .iter()
                .map(|t| TripletRecord {
                    subj: span_to_disk(t.subject),
                    obj: span_to_disk(t.object),
                    relation: t.relation.clone(),
                })
                .collect(),
        }
    }
}

pub fn document_to_json(d: &Document) -> String {
    serde_json::to_string(&DocumentRecord::from(d)).expect("document serializes")
}

pub fn document_from_json(line: &str) -> Result<Document> {
    let rec: DocumentRecord = serde_json::from_str(line).map_err(json_err("document"))?;
    rec.try_into()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(json_err(format!("{}:{}", path.display(), i + 1)))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for it in items {
        let line = serde_json::to_string(it).map_err(json_err(path.display().to_string()))?;
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    read_jsonl::<DocumentRecord>(path)?
        .into_iter()
        .map(Document::try_from)
        .collect()
}

pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    let recs: Vec<DocumentRecord> = docs.iter().map(DocumentRecord::from).collect();
    write_jsonl(path, &recs)
}
