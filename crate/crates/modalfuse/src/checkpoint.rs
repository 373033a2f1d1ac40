//! Checkpoint container: magic "MFC1", a config echo, the run seed, then
//! ordered named tensors with f32 little-endian payloads. Loading then
//! saving reproduces the file byte for byte; training quantizes its
//! in-memory parameters after each save so the file is canonical.
//!
//! Layout:
//!   "MFC1"
//!   u32 config length | config JSON (UTF-8)
//!   u64 seed
//!   u32 tensor count
//!   per tensor: u32 name length | name | u32 rows | u32 cols
//!               | rows*cols f32 values, row-major

use crate::error::{Error, Result};
use crate::params::ParamSet;
use ndarray::Array2;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MFC1";

pub struct Checkpoint {
    pub config_json: String,
    pub seed: u64,
    pub params: ParamSet,
}

pub fn save_checkpoint(
    path: &Path,
    config_json: &str,
    seed: u64,
    params: &ParamSet,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, config_json.len() as u32)?;
    w.write_all(config_json.as_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    write_u32(&mut w, params.len() as u32)?;
    for (name, tensor) in params.iter() {
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(&mut w, tensor.nrows() as u32)?;
        write_u32(&mut w, tensor.ncols() as u32)?;
        for &v in tensor.iter() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Load(format!(
            "{} is not a checkpoint (bad magic {:?})",
            path.display(),
            magic
        )));
    }
    let config_len = read_u32(&mut r)? as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)?;
    let config_json = String::from_utf8(config_bytes)
        .map_err(|_| Error::Load("checkpoint config is not UTF-8".into()))?;
    let mut seed_bytes = [0u8; 8];
    r.read_exact(&mut seed_bytes)?;
    let seed = u64::from_le_bytes(seed_bytes);

    let count = read_u32(&mut r)? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Load("checkpoint tensor name is not UTF-8".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut payload = vec![0u8; rows * cols * 4];
        r.read_exact(&mut payload)?;
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let tensor = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::Load(format!("tensor {name}: {e}")))?;
        params.insert(name, tensor);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Load("trailing bytes after checkpoint payload".into()));
    }
    Ok(Checkpoint { config_json, seed, params })
}

/// Dotted paths of leaves that differ between two JSON documents, for
/// refusing checkpoints trained under a different config.
pub fn diff_configs(a: &serde_json::Value, b: &serde_json::Value) -> Vec<String> {
    let mut out = Vec::new();
    diff_values("", a, b, &mut out);
    out.sort();
    out
}

fn diff_values(path: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            let keys: std::collections::BTreeSet<&String> =
                ma.keys().chain(mb.keys()).collect();
            for key in keys {
                let sub = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                match (ma.get(key), mb.get(key)) {
                    (Some(x), Some(y)) => diff_values(&sub, x, y, out),
                    (Some(x), None) => out.push(format!("{sub}: {x} vs <missing>")),
                    (None, Some(y)) => out.push(format!("{sub}: <missing> vs {y}")),
                    (None, None) => unreachable!(),
                }
            }
        }
        _ => {
            if a != b {
                out.push(format!("{path}: {a} vs {b}"));
            }
        }
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use serde_json::json;

    fn sample_params() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("b.second", array![[0.25, -1.5], [3.0, 0.0]]);
        p.insert("a.first", array![[1.0, 2.0, 3.0]]);
        p.insert("empty-ish", array![[std::f64::consts::PI]]);
        p
    }

    #[test]
    fn round_trip_preserves_order_shapes_and_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut params = sample_params();
        save_checkpoint(&path, "{\"width\":8}", 99, &params).unwrap();
        params.quantize_f32();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.seed, 99);
        assert_eq!(loaded.config_json, "{\"width\":8}");
        let names: Vec<&str> = loaded.params.iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["b.second", "a.first", "empty-ish"]);
        for (name, tensor) in params.iter() {
            assert_eq!(loaded.params.get(name), tensor, "{name}");
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.ckpt");
        let second = dir.path().join("b.ckpt");
        let params = sample_params();
        save_checkpoint(&first, "{}", 7, &params).unwrap();
        let loaded = load_checkpoint(&first).unwrap();
        save_checkpoint(&second, &loaded.config_json, loaded.seed, &loaded.params).unwrap();
        let a = std::fs::read(&first).unwrap();
        let b = std::fs::read(&second).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Load(_))));

        let good = dir.path().join("good.ckpt");
        save_checkpoint(&good, "{}", 1, &sample_params()).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint(&cut).is_err());

        let padded = dir.path().join("padded.ckpt");
        let mut extended = bytes.clone();
        extended.push(0);
        std::fs::write(&padded, &extended).unwrap();
        assert!(matches!(load_checkpoint(&padded), Err(Error::Load(_))));
    }

    #[test]
    fn config_diff_reports_dotted_paths() {
        let a = json!({"model": {"width": 64, "depth": 2}, "seed": 1});
        let b = json!({"model": {"width": 32, "depth": 2}, "seed": 1, "extra": true});
        let diff = diff_configs(&a, &b);
        assert_eq!(
            diff,
            vec![
                "extra: <missing> vs true".to_string(),
                "model.width: 64 vs 32".to_string(),
            ]
        );
        assert!(diff_configs(&a, &a).is_empty());
    }
}
