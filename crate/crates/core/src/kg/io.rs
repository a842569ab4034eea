//! TSV triples and JSON-lines label files.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::{Entity, KgStore, Relation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    pub languages: Vec<String>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { languages: ["en", "fr", "it", "ja", "zh"].map(String::from).to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub per_language: BTreeMap<String, usize>,
    pub n_entities: usize,
    pub n_relations: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    #[default]
    Entity,
    Relation,
}

/// One line of the labels file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: u64,
    #[serde(default)]
    pub kind: LabelKind,
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub descriptions: BTreeMap<String, String>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Reads a label file and a triple file into a store. Every referenced id must
/// be declared in the label file; language tags must be configured.
pub fn ingest(triples_path: &Path, labels_path: &Path, config: &IngestConfig) -> Result<(KgStore, IngestReport)> {
    let languages: HashSet<&str> = config.languages.iter().map(String::as_str).collect();
    let check_lang = |tag: &str, line: usize, path: &Path| -> Result<()> {
        if languages.contains(tag) {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown language tag {tag:?} at {}:{line}", path.display())))
        }
    };

    let mut entities = Vec::new();
    let mut relations = Vec::new();
    let mut entity_ids = HashSet::new();
    let mut relation_ids = HashSet::new();
    for (i, line) in open(labels_path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(labels_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(labels_path, lineno, e.to_string()))?;
        for tag in rec.labels.keys().chain(rec.descriptions.keys()) {
            check_lang(tag, lineno, labels_path)?;
        }
        match rec.kind {
            LabelKind::Entity => {
                if rec.labels.is_empty() {
                    return Err(parse_err(labels_path, lineno, format!("entity {} has no label", rec.id)));
                }
                if !entity_ids.insert(rec.id) {
                    return Err(parse_err(labels_path, lineno, format!("duplicate entity id {}", rec.id)));
                }
                entities.push(Entity { id: rec.id, labels: rec.labels, descriptions: rec.descriptions });
            }
            LabelKind::Relation => {
                if !relation_ids.insert(rec.id) {
                    return Err(parse_err(labels_path, lineno, format!("duplicate relation id {}", rec.id)));
                }
                relations.push(Relation { id: rec.id, labels: rec.labels });
            }
        }
    }

    let mut triples = Vec::new();
    for (i, line) in open(triples_path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(triples_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                triples_path,
                lineno,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let num = |s: &str, what: &str| -> Result<u64> {
            s.trim().parse().map_err(|_| parse_err(triples_path, lineno, format!("bad {what} id {s:?}")))
        };
        let (h, r, t) = (num(fields[0], "head")?, num(fields[1], "relation")?, num(fields[2], "tail")?);
        let lang = fields[3].trim();
        check_lang(lang, lineno, triples_path)?;
        if !entity_ids.contains(&h) {
            return Err(parse_err(triples_path, lineno, format!("dangling head id {h}")));
        }
        if !relation_ids.contains(&r) {
            return Err(parse_err(triples_path, lineno, format!("dangling relation id {r}")));
        }
        if !entity_ids.contains(&t) {
            return Err(parse_err(triples_path, lineno, format!("dangling tail id {t}")));
        }
        triples.push((h, r, t, lang.to_string()));
    }

    let (store, duplicates) = KgStore::new(config.languages.clone(), entities, relations, triples)?;
    let report = IngestReport {
        per_language: store.triple_counts_by_language(),
        n_entities: store.n_entities(),
        n_relations: store.n_relations(),
        duplicates,
    };
    Ok((store, report))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes `(h, r, t, lang)` rows with external ids.
pub fn write_triples<'a>(
    store: &KgStore,
    triples: impl IntoIterator<Item = &'a super::Triple>,
    path: &Path,
) -> Result<()> {
    let mut w = create(path)?;
    for t in triples {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            store.entity_id(t.head),
            store.relation_id(t.relation),
            store.entity_id(t.tail),
            store.lang_name(t.lang)
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_labels(store: &KgStore, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for e in store.entities() {
        let rec = LabelRecord {
            id: e.id,
            kind: LabelKind::Entity,
            labels: e.labels.clone(),
            descriptions: e.descriptions.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec)?).map_err(io)?;
    }
    for r in store.relations() {
        let rec = LabelRecord {
            id: r.id,
            kind: LabelKind::Relation,
            labels: r.labels.clone(),
            descriptions: BTreeMap::new(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec)?).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes the whole store in canonical order.
pub fn export(store: &KgStore, triples_path: &Path, labels_path: &Path) -> Result<()> {
    write_triples(store, store.triples(), triples_path)?;
    write_labels(store, labels_path)
}

/// Reads a triples-only file against an existing store (used for split files).
pub fn read_triples(store: &KgStore, path: &Path) -> Result<Vec<super::Triple>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(parse_err(path, lineno, "expected 4 tab-separated fields"));
        }
        let num =
            |s: &str| -> Result<u64> { s.trim().parse().map_err(|_| parse_err(path, lineno, format!("bad id {s:?}"))) };
        let rec = super::TripleRecord { h: num(f[0])?, r: num(f[1])?, t: num(f[2])?, lang: f[3].trim().into() };
        out.push(store.from_record(&rec).map_err(|e| parse_err(path, lineno, e.to_string()))?);
    }
    Ok(out)
}

/// Serializes `items` as JSON lines.
pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        writeln!(w, "{}", serde_json::to_string(&item)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const LABELS: &str = r#"{"id":1,"labels":{"en":"Paris","fr":"Paris"},"descriptions":{"en":"capital of France"}}
{"id":2,"labels":{"en":"France"}}
{"id":3,"labels":{"ja":"東京"}}
{"id":10,"kind":"relation","labels":{"en":"capital of"}}
"#;

    #[test]
    fn per_language_counts_match_lines() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write(dir.path(), "labels.jsonl", LABELS);
        let triples = write(dir.path(), "t.tsv", "1\t10\t2\ten\n1\t10\t2\tfr\n3\t10\t2\tja\n2\t10\t1\ten\n");
        let (store, report) = ingest(&triples, &labels, &IngestConfig::default()).unwrap();
        assert_eq!(report.per_language["en"], 2);
        assert_eq!(report.per_language["fr"], 1);
        assert_eq!(report.per_language["ja"], 1);
        assert_eq!(report.per_language["zh"], 0);
        assert_eq!(store.triples().len(), 4);
        assert_eq!(report.n_entities, 3);
    }

    #[test]
    fn dangling_tail_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write(dir.path(), "labels.jsonl", LABELS);
        let triples = write(dir.path(), "t.tsv", "1\t10\t2\ten\n1\t10\t99\ten\n");
        let err = ingest(&triples, &labels, &IngestConfig::default()).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("tail"), "{msg}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_and_unknown_language() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write(dir.path(), "labels.jsonl", LABELS);
        let bad = write(dir.path(), "bad.tsv", "1\t10\t2\n");
        assert!(matches!(ingest(&bad, &labels, &IngestConfig::default()), Err(Error::Parse { line: 1, .. })));
        let de = write(dir.path(), "de.tsv", "1\t10\t2\tde\n");
        assert!(matches!(ingest(&de, &labels, &IngestConfig::default()), Err(Error::Config(_))));
        let nan = write(dir.path(), "nan.tsv", "x\t10\t2\ten\n");
        assert!(matches!(ingest(&nan, &labels, &IngestConfig::default()), Err(Error::Parse { .. })));
    }

    #[test]
    fn export_then_ingest_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write(dir.path(), "labels.jsonl", LABELS);
        let triples = write(dir.path(), "t.tsv", "2\t10\t1\ten\n1\t10\t2\tfr\n1\t10\t2\tfr\n");
        let cfg = IngestConfig::default();
        let (store, report) = ingest(&triples, &labels, &cfg).unwrap();
        assert_eq!(report.duplicates, 1);
        let (t2, l2) = (dir.path().join("t2.tsv"), dir.path().join("l2.jsonl"));
        export(&store, &t2, &l2).unwrap();
        let (again, _) = ingest(&t2, &l2, &cfg).unwrap();
        assert_eq!(store, again);
    }
}
