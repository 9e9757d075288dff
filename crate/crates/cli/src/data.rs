//! Long-format curve files: one `curve_id,time,value` row per observation.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use regclust::{Curve, Dataset};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Parses long-format CSV text. Curves keep the order of their first row and
/// their times are sorted.
pub fn parse_csv(text: &str) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| CliError::Data(e.to_string()))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols != ["curve_id", "time", "value"] {
        return Err(CliError::Data(format!(
            "expected header curve_id,time,value, found {}",
            cols.join(",")
        )));
    }
    let mut order: Vec<String> = Vec::new();
    let mut points: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    let mut seen: HashSet<(String, u64)> = HashSet::new();
    for (k, rec) in reader.records().enumerate() {
        // header is line 1
        let line = k + 2;
        let rec = rec.map_err(|e| CliError::Data(format!("line {line}: {e}")))?;
        let num = |j: usize, name: &str| -> Result<f64, CliError> {
            let v: f64 = rec[j].parse().map_err(|_| {
                CliError::Data(format!("line {line}: {name} `{}` is not a number", &rec[j]))
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::Data(format!(
                    "line {line}: {name} must be finite"
                )))
            }
        };
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(CliError::Data(format!("line {line}: empty curve_id")));
        }
        let t = num(1, "time")?;
        let y = num(2, "value")?;
        if !seen.insert((id.clone(), (t + 0.0).to_bits())) {
            return Err(CliError::Data(format!(
                "line {line}: duplicate time {t} for curve `{id}`"
            )));
        }
        if !points.contains_key(&id) {
            order.push(id.clone());
        }
        points.entry(id).or_default().push((t, y));
    }
    if order.is_empty() {
        return Err(CliError::Data("no observations".into()));
    }
    let curves = order
        .into_iter()
        .map(|id| {
            let mut p = points.remove(&id).unwrap_or_default();
            p.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (t, y) = p.into_iter().unzip();
            Curve::new(id, t, y).map_err(CliError::from)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(curves)?)
}

pub fn load_csv(path: &Path) -> Result<Dataset, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    parse_csv(&text).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn to_csv(data: &Dataset) -> String {
    let mut out = String::from("curve_id,time,value\n");
    for c in &data.curves {
        for (t, y) in c.times.iter().zip(&c.values) {
            out.push_str(&format!("{},{t},{y}\n", c.id));
        }
    }
    out
}

pub fn write_csv(data: &Dataset, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, to_csv(data)).map_err(CliError::io(path))
}

/// Git-style content hash: SHA-256 of `blob <len>\0` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
