//! Snapshot files.
//!
//! Text layout:
//!
//! ```text
//! # snapshots M=<int> d=<int>
//! # meta {"system":"lorenz","dt":0.1,"regime":"ergodic"}   (optional)
//! <M lines of d floats: x>
//! <M lines of d floats: y>
//! <M lines of one weight each, or one line of M weights>
//! ```
//!
//! Files ending in `.json` (or starting with `{`) are read as an object with
//! keys `X`, `Y`, `weights` and `meta`.

use std::fs;
use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};

use super::{SnapshotMeta, SnapshotSet};
use crate::error::{Error, Result};
use crate::numkit::RMatrix;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotJson {
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
    #[serde(rename = "Y")]
    y: Vec<Vec<f64>>,
    weights: Vec<f64>,
    #[serde(default)]
    meta: SnapshotMeta,
}

fn rows_of(m: &RMatrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|k| m[(i, k)]).collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], d: usize, what: &str) -> Result<RMatrix> {
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(Error::Parse(format!("{what} row {i} has {} entries, expected {d}", r.len())));
    }
    Ok(Mat::from_fn(rows.len(), d, |i, k| rows[i][k]))
}

pub fn to_text(s: &SnapshotSet) -> Result<String> {
    let mut out = format!("# snapshots M={} d={}\n", s.len(), s.dim());
    out.push_str(&format!("# meta {}\n", serde_json::to_string(&s.meta)?));
    for m in [&s.x, &s.y] {
        for i in 0..m.nrows() {
            let line: Vec<String> = (0..m.ncols()).map(|k| format!("{:?}", m[(i, k)])).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    for w in &s.weights {
        out.push_str(&format!("{w:?}\n"));
    }
    Ok(out)
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let bad = || Error::Parse(format!("malformed header {line:?}; expected `# snapshots M=<int> d=<int>`"));
    let rest = line.trim().strip_prefix('#').ok_or_else(bad)?.trim();
    let rest = rest.strip_prefix("snapshots").ok_or_else(bad)?;
    let mut m = None;
    let mut d = None;
    for tok in rest.split_whitespace() {
        match tok.split_once('=') {
            Some(("M", v)) => m = Some(v.parse::<usize>().map_err(|_| bad())?),
            Some(("d", v)) => d = Some(v.parse::<usize>().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    match (m, d) {
        (Some(m), Some(d)) => Ok((m, d)),
        _ => Err(bad()),
    }
}

fn parse_floats(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {lineno}: cannot parse {t:?} as a number")))
        })
        .collect()
}

pub fn from_text(text: &str) -> Result<SnapshotSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty snapshot file".into()))?;
    let (m, d) = parse_header(header)?;
    let mut meta = SnapshotMeta::default();
    let mut data: Vec<Vec<f64>> = Vec::new();
    for (no, line) in lines {
        let t = line.trim();
        if let Some(c) = t.strip_prefix('#') {
            if let Some(json) = c.trim().strip_prefix("meta") {
                meta = serde_json::from_str(json.trim())
                    .map_err(|e| Error::Parse(format!("line {}: bad meta: {e}", no + 1)))?;
            }
            continue;
        }
        data.push(parse_floats(t, no + 1)?);
    }
    if data.len() < 2 * m {
        return Err(Error::Parse(format!("expected {} state rows, found {}", 2 * m, data.len())));
    }
    let x = matrix_from_rows(&data[..m], d, "x")?;
    let y = matrix_from_rows(&data[m..2 * m], d, "y")?;
    let tail = &data[2 * m..];
    let weights: Vec<f64> = if tail.len() == 1 && tail[0].len() == m {
        tail[0].clone()
    } else if tail.len() == m && tail.iter().all(|r| r.len() == 1) {
        tail.iter().map(|r| r[0]).collect()
    } else {
        return Err(Error::Parse(format!(
            "weights must be {m} lines of one value or one line of {m} values"
        )));
    };
    SnapshotSet::new(x, y, weights, meta)
}

pub fn to_json(s: &SnapshotSet) -> Result<String> {
    let j = SnapshotJson {
        x: rows_of(&s.x),
        y: rows_of(&s.y),
        weights: s.weights.clone(),
        meta: s.meta.clone(),
    };
    Ok(serde_json::to_string(&j)?)
}

pub fn from_json(text: &str) -> Result<SnapshotSet> {
    let j: SnapshotJson = serde_json::from_str(text)?;
    let d = j.x.first().map(|r| r.len()).unwrap_or(0);
    let x = matrix_from_rows(&j.x, d, "X")?;
    let y = matrix_from_rows(&j.y, d, "Y")?;
    SnapshotSet::new(x, y, j.weights, j.meta)
}

fn is_json_path(path: &Path) -> bool {
    path.extension().map(|e| e == "json").unwrap_or(false)
}

pub fn read_snapshots(path: impl AsRef<Path>) -> Result<SnapshotSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    if is_json_path(path) || text.trim_start().starts_with('{') {
        from_json(&text)
    } else {
        from_text(&text)
    }
}

pub fn write_snapshots(s: &SnapshotSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = if is_json_path(path) { to_json(s)? } else { to_text(s)? };
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{lorenz_trajectory, snapshots_from_trajectory, LorenzParams, Weighting};

    fn sample() -> SnapshotSet {
        let t = lorenz_trajectory([1.0, 2.0, 3.0], 0.1, 25, LorenzParams::default(), 20).unwrap();
        snapshots_from_trajectory(&t, Weighting::Uniform).unwrap()
    }

    fn assert_same(a: &SnapshotSet, b: &SnapshotSet) {
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.meta, b.meta);
    }

    #[test]
    fn text_and_json_round_trip_bitwise() {
        let s = sample();
        let dir = tempfile::tempdir().unwrap();
        for name in ["snap.txt", "snap.json"] {
            let p = dir.path().join(name);
            write_snapshots(&s, &p).unwrap();
            assert_same(&s, &read_snapshots(&p).unwrap());
        }
    }

    #[test]
    fn single_row_and_weight_line_forms() {
        let text = "# snapshots M=1 d=2\n0.5 1.5\n2.5 3.5\n1\n";
        let s = from_text(text).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.y[(0, 1)], 3.5);
        let text = "# snapshots M=2 d=1\n0\n1\n1\n2\n0.25 0.75\n";
        let s = from_text(text).unwrap();
        assert_eq!(s.weights, vec![0.25, 0.75]);
    }

    #[test]
    fn malformed_inputs_rejected() {
        assert!(from_text("snapshots M=1 d=1\n1\n1\n1\n").is_err());
        assert!(from_text("# snapshots M=x d=1\n1\n1\n1\n").is_err());
        // wrong weight count
        assert!(from_text("# snapshots M=2 d=1\n0\n1\n1\n2\n0.5 0.25 0.25\n").is_err());
        // inconsistent row length
        assert!(from_text("# snapshots M=2 d=2\n0 1\n1\n1 2\n2 3\n1\n1\n").is_err());
        // negative weight
        assert!(from_text("# snapshots M=1 d=1\n0\n1\n-1\n").is_err());
        assert!(from_json(r#"{"X":[[1]],"Y":[[1],[2]],"weights":[1]}"#).is_err());
        assert!(from_json(r#"{"X":[[1]],"Y":[[1]],"weights":[1],"extra":1}"#).is_err());
    }
}
