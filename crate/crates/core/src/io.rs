//! Dataset file formats.
//!
//! * edges: `u<TAB>v` per line, 0-indexed
//! * features: CSV (one row per node) or binary `GUFM` + `n: u64` + `f: u64`
//!   + `n·f` row-major `f64`, all little-endian
//! * labels: `node<TAB>class` per line; absent nodes are unlabeled
//! * masks: one node id per line

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::{build_graph, Built, Graph};

pub const FEATURE_MAGIC: &[u8; 4] = b"GUFM";

/// Paths to the five files making up one dataset.
#[derive(Clone, Debug)]
pub struct DatasetPaths<P> {
    pub edges: P,
    pub features: P,
    pub labels: P,
    pub train: P,
    pub test: P,
}

impl DatasetPaths<std::path::PathBuf> {
    /// Conventional file names inside a directory.
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            edges: dir.join("edges.tsv"),
            features: dir.join("features.gufm"),
            labels: dir.join("labels.tsv"),
            train: dir.join("train.txt"),
            test: dir.join("test.txt"),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_usize(tok: &str, path: &Path, line: usize) -> Result<usize> {
    tok.trim()
        .parse()
        .map_err(|_| Error::Data(format!("{}:{}: expected a node id, got {tok:?}", path.display(), line + 1)))
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read_text(path)?;
    lines(&text)
        .map(|(i, l)| {
            let mut it = l.split('\t');
            match (it.next(), it.next(), it.next()) {
                (Some(u), Some(v), None) => Ok((parse_usize(u, path, i)?, parse_usize(v, path, i)?)),
                _ => Err(Error::Data(format!("{}:{}: expected `u<TAB>v`", path.display(), i + 1))),
            }
        })
        .collect()
}

pub fn write_edges(path: &Path, graph: &Graph) -> Result<()> {
    let mut out = String::new();
    for (u, v) in graph.edges() {
        out.push_str(&format!("{u}\t{v}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads binary features when the file starts with the magic bytes, CSV otherwise.
pub fn read_features(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(FEATURE_MAGIC) {
        decode_features(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Data(format!("{}: neither GUFM nor UTF-8 CSV", path.display())))?;
        parse_csv_features(&text)
    }
}

pub fn decode_features(bytes: &[u8]) -> Result<Array2<f64>> {
    let body = bytes
        .strip_prefix(FEATURE_MAGIC.as_slice())
        .ok_or_else(|| Error::Data("missing GUFM magic".into()))?;
    if body.len() < 16 {
        return Err(Error::Data("truncated GUFM header".into()));
    }
    let n = u64::from_le_bytes(body[0..8].try_into().unwrap()) as usize;
    let f = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let payload = &body[16..];
    let expected = n.checked_mul(f).and_then(|c| c.checked_mul(8));
    if expected != Some(payload.len()) {
        return Err(Error::Data(format!(
            "GUFM payload has {} bytes, header declares {n} x {f}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((n, f), values).expect("length checked"))
}

pub fn encode_features(x: ArrayView2<'_, f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * x.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(x.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(x.ncols() as u64).to_le_bytes());
    for v in x.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_csv_features(text: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines(text) {
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("features line {}: bad value {t:?}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::shape(
                    format!("{} columns", first.len()),
                    format!("{} columns on line {}", row.len(), i + 1),
                ));
            }
        }
        rows.push(row);
    }
    let f = rows.first().map_or(0, Vec::len);
    let n = rows.len();
    Ok(Array2::from_shape_vec((n, f), rows.into_iter().flatten().collect()).expect("rectangular"))
}

pub fn write_features(path: &Path, x: ArrayView2<'_, f64>) -> Result<()> {
    fs::write(path, encode_features(x)).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path, n: usize) -> Result<Vec<Option<usize>>> {
    let text = read_text(path)?;
    let mut labels = vec![None; n];
    for (i, l) in lines(&text) {
        let (node, class) = l
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("{}:{}: expected `node<TAB>class`", path.display(), i + 1)))?;
        let node = parse_usize(node, path, i)?;
        if node >= n {
            return Err(Error::Index { id: node, n });
        }
        labels[node] = Some(parse_usize(class, path, i)?);
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[Option<usize>]) -> Result<()> {
    let mut out = String::new();
    for (u, c) in labels.iter().enumerate() {
        if let Some(c) = c {
            out.push_str(&format!("{u}\t{c}\n"));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    lines(&text).map(|(i, l)| parse_usize(l, path, i)).collect()
}

pub fn write_mask(path: &Path, ids: &[usize]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for u in ids {
        writeln!(f, "{u}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn write_dataset(paths: &DatasetPaths<std::path::PathBuf>, graph: &Graph) -> Result<()> {
    write_edges(&paths.edges, graph)?;
    write_features(&paths.features, graph.features())?;
    write_labels(&paths.labels, graph.labels())?;
    write_mask(&paths.train, &graph.train_nodes())?;
    write_mask(&paths.test, &graph.test_nodes())
}

pub fn read_dataset<P: AsRef<Path>>(paths: &DatasetPaths<P>) -> Result<Built> {
    let features = read_features(paths.features.as_ref())?;
    let n = features.nrows();
    let edges = read_edges(paths.edges.as_ref())?;
    let labels = read_labels(paths.labels.as_ref(), n)?;
    let train = read_mask(paths.train.as_ref())?;
    let test = read_mask(paths.test.as_ref())?;
    build_graph(n, &edges, features, labels, &train, &test)
}
