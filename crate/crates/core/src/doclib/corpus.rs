use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_document, write_document, DocError, Document, Vocab};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    /// Hex SHA-256 over the image bytes followed by the record bytes.
    pub sha256: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub documents: Vec<ManifestEntry>,
    /// Free-form provenance (e.g. generator parameters).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<serde_json::Value>,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self, DocError> {
        let text = fs::read_to_string(root.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| DocError::Malformed(format!("{MANIFEST_FILE}: {e}")))
    }

    pub fn save(&self, root: &Path) -> Result<(), DocError> {
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        fs::write(root.join(MANIFEST_FILE), json)?;
        Ok(())
    }
}

pub(crate) fn content_hash(image: &[u8], record: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(image);
    h.update(record);
    hex::encode(h.finalize())
}

/// Writes documents, vocabulary and manifest under `root`.
pub(crate) fn write_corpus(
    root: &Path,
    docs: impl IntoIterator<Item = Result<Document, DocError>>,
    vocab: &Vocab,
    source: Option<serde_json::Value>,
) -> Result<Manifest, DocError> {
    fs::create_dir_all(root)?;
    let mut manifest = Manifest { documents: Vec::new(), source };
    for doc in docs {
        let doc = doc?;
        let (png, json) = write_document(&doc, root)?;
        manifest.documents.push(ManifestEntry { doc_id: doc.doc_id.clone(), sha256: content_hash(&png, &json) });
    }
    vocab.save(&root.join(VOCAB_FILE))?;
    manifest.save(root)?;
    Ok(manifest)
}

/// A corpus directory: `images/`, `ocr/`, `vocab.txt` and `manifest.json`.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub vocab: Vocab,
    pub manifest: Manifest,
    pub documents: Vec<Document>,
}

/// Loads every document listed in the manifest, in manifest order.
pub fn load_corpus(root: &Path) -> Result<Corpus, DocError> {
    let manifest = Manifest::load(root)?;
    let vocab = Vocab::load(&root.join(VOCAB_FILE))?;
    let documents = manifest
        .documents
        .iter()
        .map(|e| read_document(&root.join("ocr").join(format!("{}.json", e.doc_id)), root, &vocab))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus { root: root.to_path_buf(), vocab, manifest, documents })
}
