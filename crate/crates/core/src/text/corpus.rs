use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::text::generator::GeneratorSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub label: usize,
    pub text: String,
}

/// Provenance stored next to a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub class_names: Vec<String>,
    /// The spec that produced the corpus, when generated.
    pub spec: Option<GeneratorSpec>,
}

impl Corpus {
    /// Checks labels are dense in `0..K` and texts are non-empty.
    pub fn new(documents: Vec<Document>, class_names: Vec<String>, spec: Option<GeneratorSpec>) -> Result<Self> {
        let k = class_names.len();
        if k < 2 {
            return Err(Error::InvalidSpec(format!("{k} classes; need at least 2")));
        }
        for d in &documents {
            if d.label >= k {
                return Err(Error::LabelOutOfRange {
                    label: d.label,
                    classes: k,
                });
            }
            if d.text.trim().is_empty() {
                return Err(Error::InvalidSpec(format!("document {} has empty text", d.id)));
            }
        }
        Ok(Self {
            documents,
            class_names,
            spec,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.documents.iter().map(|d| d.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for d in &self.documents {
            c[d.label] += 1;
        }
        c
    }

    pub fn meta(&self) -> CorpusMeta {
        CorpusMeta {
            class_names: self.class_names.clone(),
            class_counts: self.class_counts(),
            generator: self.spec.clone(),
        }
    }

    /// One JSON object per line with keys `id`, `label`, `text`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.documents {
            out.push_str(&serde_json::to_string(d).expect("plain struct"));
            out.push('\n');
        }
        out
    }

    /// Writes the corpus and its `<path>.meta.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::atomic_write(path, self.to_jsonl().as_bytes())?;
        let meta = serde_json::to_string_pretty(&self.meta()).expect("plain struct") + "\n";
        fsio::atomic_write(&meta_path(path), meta.as_bytes())
    }

    /// Reads a corpus. Class names come from the sidecar when present,
    /// otherwise `class_<i>` up to the largest label.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fsio::read_to_string(path)?;
        let mut documents = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let d: Document = serde_json::from_str(line).map_err(|e| Error::Parse {
                what: format!("{} line {}", path.display(), n + 1),
                detail: e.to_string(),
            })?;
            documents.push(d);
        }
        let meta_file = meta_path(path);
        let (class_names, spec) = if meta_file.exists() {
            let meta: CorpusMeta =
                serde_json::from_str(&fsio::read_to_string(&meta_file)?).map_err(|e| Error::Parse {
                    what: meta_file.display().to_string(),
                    detail: e.to_string(),
                })?;
            (meta.class_names, meta.generator)
        } else {
            let k = documents.iter().map(|d| d.label + 1).max().unwrap_or(0).max(2);
            ((0..k).map(|c| format!("class_{c}")).collect(), None)
        };
        Self::new(documents, class_names, spec)
    }
}

pub fn meta_path(corpus: &Path) -> PathBuf {
    let mut s = corpus.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}
