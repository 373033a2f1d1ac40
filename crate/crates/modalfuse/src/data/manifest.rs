//! File-backed datasets: a JSON manifest names per-modality CSV payload
//! files plus an optional targets file. Samples are aligned across files by
//! id; ids missing from a modality file are marked absent rather than
//! rejected.

use super::{Dataset, Payload, Provenance, Sample, Split, Targets};
use crate::error::{Error, Result};
use crate::masking::PresenceBitmap;
use crate::schema::{ModalityDecl, ModalityKind, ModalitySchema};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestModality {
    pub name: String,
    pub kind: ModalityKind,
    pub dim: usize,
    pub token_budget: usize,
    /// CSV path, relative to the manifest file.
    pub file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTargets {
    pub file: String,
    pub column: String,
    pub kind: TargetKind,
}

/// Root document of a file-backed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub modalities: Vec<ManifestModality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<ManifestTargets>,
}

impl Manifest {
    pub fn schema(&self) -> Result<ModalitySchema> {
        ModalitySchema::new(
            self.modalities
                .iter()
                .map(|m| ModalityDecl {
                    name: m.name.clone(),
                    kind: m.kind,
                    dim: m.dim,
                    token_budget: m.token_budget,
                })
                .collect(),
        )
    }
}

fn parse_number(raw: &str, file: &Path, context: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| {
        Error::Parse(format!(
            "{}: `{raw}` is not a number ({context})",
            file.display()
        ))
    })
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Load(format!("cannot open `{}`: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record =
            record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((headers, rows))
}

fn load_tabular(path: &Path, dim: usize) -> Result<HashMap<String, Vec<f64>>> {
    let (headers, rows) = read_csv(path)?;
    if headers.len() != dim + 1 || headers[0] != "id" {
        return Err(Error::InvalidSchema(format!(
            "{}: expected header `id` plus {dim} value columns, found {} columns",
            path.display(),
            headers.len()
        )));
    }
    let mut out = HashMap::new();
    for row in rows {
        let id = row[0].clone();
        let values: Vec<f64> = row[1..]
            .iter()
            .map(|v| parse_number(v, path, &format!("sample `{id}`")))
            .collect::<Result<_>>()?;
        if out.insert(id.clone(), values).is_some() {
            return Err(Error::Load(format!(
                "{}: duplicate id `{id}`",
                path.display()
            )));
        }
    }
    Ok(out)
}

fn load_sequence(path: &Path, dim: usize) -> Result<HashMap<String, Array2<f64>>> {
    let (headers, rows) = read_csv(path)?;
    if headers.len() != dim + 2 || headers[0] != "id" || headers[1] != "step" {
        return Err(Error::InvalidSchema(format!(
            "{}: expected header `id,step` plus {dim} value columns, found {} columns",
            path.display(),
            headers.len()
        )));
    }
    let mut grouped: HashMap<String, BTreeMap<u64, Vec<f64>>> = HashMap::new();
    for row in rows {
        let id = row[0].clone();
        let step: u64 = row[1].trim().parse().map_err(|_| {
            Error::Parse(format!(
                "{}: `{}` is not a step index (sample `{id}`)",
                path.display(),
                row[1]
            ))
        })?;
        let values: Vec<f64> = row[2..]
            .iter()
            .map(|v| parse_number(v, path, &format!("sample `{id}` step {step}")))
            .collect::<Result<_>>()?;
        if grouped.entry(id.clone()).or_default().insert(step, values).is_some() {
            return Err(Error::Load(format!(
                "{}: duplicate (id `{id}`, step {step})",
                path.display()
            )));
        }
    }
    let mut out = HashMap::new();
    for (id, steps) in grouped {
        let mut arr = Array2::zeros((steps.len(), dim));
        for (t, (_, values)) in steps.into_iter().enumerate() {
            for (j, v) in values.into_iter().enumerate() {
                arr[[t, j]] = v;
            }
        }
        out.insert(id, arr);
    }
    Ok(out)
}

/// Reads a manifest and its payload files into a dataset.
///
/// The sample set is the union of ids across modality files, ordered
/// lexicographically; ids absent from a file get an unset presence bit.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Load(format!("cannot read `{}`: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidSchema(format!("{}: {e}", path.display())))?;
    if manifest.version != 1 {
        return Err(Error::InvalidSchema(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    let schema = manifest.schema()?;
    let base = path.parent().unwrap_or(Path::new("."));

    enum Loaded {
        Tabular(HashMap<String, Vec<f64>>),
        Sequence(HashMap<String, Array2<f64>>),
    }
    let mut loaded = Vec::new();
    let mut ids: BTreeSet<String> = BTreeSet::new();
    for decl in &manifest.modalities {
        let file = base.join(&decl.file);
        let data = match decl.kind {
            ModalityKind::Tabular => {
                let map = load_tabular(&file, decl.dim)?;
                ids.extend(map.keys().cloned());
                Loaded::Tabular(map)
            }
            ModalityKind::Sequence => {
                let map = load_sequence(&file, decl.dim)?;
                ids.extend(map.keys().cloned());
                Loaded::Sequence(map)
            }
        };
        loaded.push(data);
    }
    if ids.is_empty() {
        return Err(Error::Load("no usable samples in any modality file".into()));
    }

    let mut targets_by_id: HashMap<String, Targets> = HashMap::new();
    let mut class_count = None;
    if let Some(t) = &manifest.targets {
        let file = base.join(&t.file);
        let (headers, rows) = read_csv(&file)?;
        let col = headers.iter().position(|h| h == &t.column).ok_or_else(|| {
            Error::InvalidSchema(format!(
                "{}: no column named `{}`",
                file.display(),
                t.column
            ))
        })?;
        let id_col = headers.iter().position(|h| h == "id").ok_or_else(|| {
            Error::InvalidSchema(format!("{}: no `id` column", file.display()))
        })?;
        let mut max_class = 0usize;
        for row in rows {
            let id = row[id_col].clone();
            let target = match t.kind {
                TargetKind::Regression => Targets {
                    regression: Some(parse_number(&row[col], &file, &format!("sample `{id}`"))?),
                    class: None,
                },
                TargetKind::Classification => {
                    let label: usize = row[col].trim().parse().map_err(|_| {
                        Error::Parse(format!(
                            "{}: `{}` is not a class label (sample `{id}`)",
                            file.display(),
                            row[col]
                        ))
                    })?;
                    max_class = max_class.max(label);
                    Targets { regression: None, class: Some(label) }
                }
            };
            if targets_by_id.insert(id.clone(), target).is_some() {
                return Err(Error::Load(format!(
                    "{}: duplicate id `{id}`",
                    file.display()
                )));
            }
        }
        if t.kind == TargetKind::Classification {
            class_count = Some(max_class + 1);
        }
    }

    let mut samples = Vec::with_capacity(ids.len());
    for id in ids {
        let mut payloads = Vec::with_capacity(loaded.len());
        let mut bits = Vec::with_capacity(loaded.len());
        for data in &loaded {
            let payload = match data {
                Loaded::Tabular(map) => map.get(&id).map(|v| Payload::Tabular(v.clone())),
                Loaded::Sequence(map) => map.get(&id).map(|a| Payload::Sequence(a.clone())),
            };
            bits.push(payload.is_some());
            payloads.push(payload);
        }
        samples.push(Sample {
            id: id.clone(),
            payloads,
            presence: PresenceBitmap::new(bits),
            targets: targets_by_id.get(&id).copied().unwrap_or_default(),
            split: Split::Train,
        });
    }

    let dataset = Dataset {
        schema,
        samples,
        provenance: Provenance::Manifest { path: path.display().to_string() },
        class_count,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes a dataset back out as a manifest plus payload CSVs.
///
/// Only present payloads are written, so presence bitmaps round-trip
/// through [`load_manifest`] exactly. Returns the manifest path.
pub fn save_manifest(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    dataset.validate()?;

    let mut modalities = Vec::new();
    for (mi, decl) in dataset.schema.modalities.iter().enumerate() {
        let file_name = format!("{}.csv", decl.name);
        let file = dir.join(&file_name);
        let mut writer = csv::Writer::from_path(&file)
            .map_err(|e| Error::Load(format!("cannot write `{}`: {e}", file.display())))?;
        match decl.kind {
            ModalityKind::Tabular => {
                let mut header = vec!["id".to_string()];
                header.extend((0..decl.dim).map(|j| format!("c{j}")));
                writer.write_record(&header).map_err(io_err)?;
                for sample in &dataset.samples {
                    if let Some(Payload::Tabular(row)) = &sample.payloads[mi] {
                        let mut record = vec![sample.id.clone()];
                        record.extend(row.iter().map(|v| format!("{v}")));
                        writer.write_record(&record).map_err(io_err)?;
                    }
                }
            }
            ModalityKind::Sequence => {
                let mut header = vec!["id".to_string(), "step".to_string()];
                header.extend((0..decl.dim).map(|j| format!("c{j}")));
                writer.write_record(&header).map_err(io_err)?;
                for sample in &dataset.samples {
                    if let Some(Payload::Sequence(arr)) = &sample.payloads[mi] {
                        for (t, row) in arr.rows().into_iter().enumerate() {
                            let mut record = vec![sample.id.clone(), t.to_string()];
                            record.extend(row.iter().map(|v| format!("{v}")));
                            writer.write_record(&record).map_err(io_err)?;
                        }
                    }
                }
            }
        }
        writer.flush()?;
        modalities.push(ManifestModality {
            name: decl.name.clone(),
            kind: decl.kind,
            dim: decl.dim,
            token_budget: decl.token_budget,
            file: file_name,
        });
    }

    let targets = if dataset.samples.iter().any(|s| s.targets.class.is_some()) {
        Some((TargetKind::Classification, "class"))
    } else if dataset.samples.iter().any(|s| s.targets.regression.is_some()) {
        Some((TargetKind::Regression, "value"))
    } else {
        None
    };
    let targets = match targets {
        Some((kind, column)) => {
            let file = dir.join("targets.csv");
            let mut writer = csv::Writer::from_path(&file)
                .map_err(|e| Error::Load(format!("cannot write `{}`: {e}", file.display())))?;
            writer.write_record(["id", column]).map_err(io_err)?;
            for sample in &dataset.samples {
                let value = match kind {
                    TargetKind::Classification => {
                        sample.targets.class.map(|c| c.to_string())
                    }
                    TargetKind::Regression => {
                        sample.targets.regression.map(|v| format!("{v}"))
                    }
                };
                if let Some(v) = value {
                    writer.write_record([sample.id.as_str(), v.as_str()]).map_err(io_err)?;
                }
            }
            writer.flush()?;
            Some(ManifestTargets {
                file: "targets.csv".into(),
                column: column.into(),
                kind,
            })
        }
        None => None,
    };

    let manifest = Manifest { version: 1, modalities, targets };
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest_path)
}

fn io_err(e: csv::Error) -> Error {
    Error::Load(format!("csv write failed: {e}"))
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(format!("json: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::measured_sparsity;
    use std::fs;

    fn write(dir: &Path, name: &str, content: &str) {
        fs::write(dir.join(name), content).unwrap();
    }

    fn two_tabular_manifest(dir: &Path) {
        write(
            dir,
            "manifest.json",
            r#"{
  "version": 1,
  "modalities": [
    {"name": "x", "kind": "tabular", "dim": 2, "token_budget": 2, "file": "x.csv"},
    {"name": "y", "kind": "tabular", "dim": 1, "token_budget": 1, "file": "y.csv"}
  ],
  "targets": {"file": "targets.csv", "column": "class", "kind": "classification"}
}"#,
        );
        write(dir, "x.csv", "id,c0,c1\na,1.0,2.0\nb,3.0,4.0\nc,5.0,6.0\n");
        write(dir, "y.csv", "id,c0\na,10.5\nb,-3.25\nd,7.0\n");
        write(dir, "targets.csv", "id,class\na,0\nb,1\nc,1\nd,0\n");
    }

    #[test]
    fn union_alignment_with_presence_bits() {
        let dir = tempfile::tempdir().unwrap();
        two_tabular_manifest(dir.path());
        let d = load_manifest(dir.path().join("manifest.json")).unwrap();
        // Union {a,b,c,d}: a,b fully aligned; c,d partial.
        assert_eq!(d.samples.len(), 4);
        let ids: Vec<&str> = d.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c", "d"]);
        let full: Vec<&str> = d
            .samples
            .iter()
            .filter(|s| s.presence.all())
            .map(|s| s.id.as_str())
            .collect();
        assert_eq!(full, vec!["a", "b"]);
        assert!(d.samples[2].presence.is_present(0) && !d.samples[2].presence.is_present(1));
        assert!(!d.samples[3].presence.is_present(0) && d.samples[3].presence.is_present(1));
        assert_eq!(d.class_count, Some(2));
        assert_eq!(d.samples[1].targets.class, Some(1));
        // Sparsity over {2,2,1,1} present of 2 modalities: 1 - 6/8.
        assert!((measured_sparsity(&d).unwrap() - 0.25).abs() < 1e-12);
    }

    fn pair_manifest(first: &str) -> String {
        format!(
            r#"{{
  "version": 1,
  "modalities": [
    {first},
    {{"name": "y", "kind": "tabular", "dim": 1, "token_budget": 1, "file": "y.csv"}}
  ]
}}"#
        )
    }

    #[test]
    fn empty_files_are_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = pair_manifest(
            r#"{"name": "x", "kind": "tabular", "dim": 1, "token_budget": 1, "file": "x.csv"}"#,
        );
        write(dir.path(), "manifest.json", &m);
        write(dir.path(), "x.csv", "id,c0\n");
        write(dir.path(), "y.csv", "id,c0\n");
        let err = load_manifest(dir.path().join("manifest.json")).unwrap_err();
        assert!(err.to_string().contains("no usable samples"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = pair_manifest(
            r#"{"name": "x", "kind": "tabular", "dim": 1, "token_budget": 1, "file": "x.csv"}"#,
        );
        write(dir.path(), "manifest.json", &m);
        write(dir.path(), "x.csv", "id,c0\na,1.0\na,2.0\n");
        write(dir.path(), "y.csv", "id,c0\na,0.0\n");
        assert!(load_manifest(dir.path().join("manifest.json")).is_err());
    }

    #[test]
    fn sequence_blocks_sorted_by_step() {
        let dir = tempfile::tempdir().unwrap();
        let m = pair_manifest(
            r#"{"name": "s", "kind": "sequence", "dim": 2, "token_budget": 4, "file": "s.csv"}"#,
        );
        write(dir.path(), "manifest.json", &m);
        write(dir.path(), "s.csv", "id,step,c0,c1\na,1,3.0,4.0\na,0,1.0,2.0\nb,0,9.0,8.0\n");
        write(dir.path(), "y.csv", "id,c0\na,0.0\nb,1.0\n");
        let d = load_manifest(dir.path().join("manifest.json")).unwrap();
        let Some(Payload::Sequence(a)) = &d.samples[0].payloads[0] else { panic!() };
        assert_eq!(a.nrows(), 2);
        assert_eq!(a[[0, 0]], 1.0);
        assert_eq!(a[[1, 0]], 3.0);
    }

    #[test]
    fn round_trip_preserves_presence_and_values() {
        let dir = tempfile::tempdir().unwrap();
        two_tabular_manifest(dir.path());
        let original = load_manifest(dir.path().join("manifest.json")).unwrap();
        let out_dir = tempfile::tempdir().unwrap();
        let manifest_path = save_manifest(&original, out_dir.path()).unwrap();
        let reloaded = load_manifest(&manifest_path).unwrap();
        assert_eq!(original.schema, reloaded.schema);
        assert_eq!(original.samples.len(), reloaded.samples.len());
        for (a, b) in original.samples.iter().zip(&reloaded.samples) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.presence, b.presence);
            assert_eq!(a.payloads, b.payloads);
            assert_eq!(a.targets, b.targets);
        }
    }

    #[test]
    fn bad_numbers_are_descriptive_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = pair_manifest(
            r#"{"name": "x", "kind": "tabular", "dim": 1, "token_budget": 1, "file": "x.csv"}"#,
        );
        write(dir.path(), "manifest.json", &m);
        write(dir.path(), "x.csv", "id,c0\na,oops\n");
        write(dir.path(), "y.csv", "id,c0\na,0.0\n");
        let err = load_manifest(dir.path().join("manifest.json")).unwrap_err();
        assert!(err.to_string().contains("oops"), "{err}");
    }
}
