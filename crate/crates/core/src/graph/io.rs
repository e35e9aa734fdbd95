use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Graph, Split};
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Locations of the four files making up a dataset on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
}

impl DatasetPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            edges: dir.join("edges.csv"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.csv"),
            splits: dir.join("splits.json"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SplitsFile {
    splits: Vec<Split>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_pair(path: &Path, line: usize, text: &str) -> Result<(usize, usize)> {
    let mut fields = text.split(',').map(str::trim);
    let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err(Error::parse(path, line, format!("expected two fields, got {text:?}")));
    };
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(path, line, format!("invalid index {s:?}")))
    };
    Ok((num(a)?, num(b)?))
}

/// Reads an edge list. Every index must be below `n_nodes`.
pub fn read_edges(path: impl AsRef<Path>, n_nodes: usize) -> Result<Graph> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut raw = Vec::new();
    for (line, l) in data_lines(&text) {
        let (a, b) = parse_pair(path, line, l)?;
        if a.max(b) >= n_nodes {
            return Err(Error::parse(
                path,
                line,
                format!("node index {} out of range for {n_nodes} nodes", a.max(b)),
            ));
        }
        raw.push((a, b));
    }
    Graph::from_edges(n_nodes, &raw)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut cols = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, l) in data_lines(&text) {
        let before = data.len();
        for field in l.split(',') {
            let v = field
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(path, line, format!("invalid number {field:?}")))?;
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => return Err(Error::parse(path, line, format!("expected {c} values, got {width}"))),
            _ => {}
        }
        rows += 1;
    }
    DenseMatrix::from_vec(rows, cols.unwrap_or(0), data)
}

/// Reads `node_id,label` rows; an optional header line is skipped. Every
/// node in `0..n_nodes` must receive exactly one label.
pub fn read_labels(path: impl AsRef<Path>, n_nodes: usize) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut labels = vec![None; n_nodes];
    for (k, (line, l)) in data_lines(&text).enumerate() {
        if k == 0 && l.replace(' ', "") == "node_id,label" {
            continue;
        }
        let (node, label) = parse_pair(path, line, l)?;
        if node >= n_nodes {
            return Err(Error::parse(
                path,
                line,
                format!("node index {node} out of range for {n_nodes} nodes"),
            ));
        }
        if labels[node].replace(label).is_some() {
            return Err(Error::parse(path, line, Error::DuplicateLabel(node).to_string()));
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or(Error::MissingLabel(i)))
        .collect()
}

pub fn read_splits(path: impl AsRef<Path>) -> Result<Vec<Split>> {
    let path = path.as_ref();
    let file: SplitsFile =
        serde_json::from_str(&read(path)?).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    Ok(file.splits)
}

/// Loads and validates a dataset. The node count comes from the features
/// file; `n_classes` defaults to the largest label plus one.
pub fn load_dataset(paths: &DatasetPaths, n_classes: Option<usize>) -> Result<Dataset> {
    let features = read_features(&paths.features)?;
    let n = features.rows();
    let graph = read_edges(&paths.edges, n)?;
    let labels = read_labels(&paths.labels, n)?;
    let n_classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |&m| m + 1));
    let splits = read_splits(&paths.splits)?;
    Dataset::new(graph, features, labels, n_classes, splits)
}

pub fn write_edges(path: impl AsRef<Path>, graph: &Graph) -> Result<()> {
    let mut out = String::with_capacity(graph.n_edges() * 12);
    for &(u, v) in graph.edges() {
        writeln!(out, "{u},{v}").unwrap();
    }
    write(path.as_ref(), &out)
}

/// Values use the shortest representation that parses back exactly.
pub fn write_features(path: impl AsRef<Path>, features: &DenseMatrix) -> Result<()> {
    let mut out = String::new();
    for i in 0..features.rows() {
        for (j, v) in features.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").unwrap();
        }
        out.push('\n');
    }
    write(path.as_ref(), &out)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let mut out = String::from("node_id,label\n");
    for (i, l) in labels.iter().enumerate() {
        writeln!(out, "{i},{l}").unwrap();
    }
    write(path.as_ref(), &out)
}

pub fn write_splits(path: impl AsRef<Path>, splits: &[Split]) -> Result<()> {
    let file = SplitsFile {
        splits: splits.to_vec(),
    };
    write(path.as_ref(), &serde_json::to_string(&file)?)
}

pub fn save_dataset(paths: &DatasetPaths, ds: &Dataset) -> Result<()> {
    write_edges(&paths.edges, &ds.graph)?;
    write_features(&paths.features, &ds.features)?;
    write_labels(&paths.labels, &ds.labels)?;
    write_splits(&paths.splits, &ds.splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(edges: &str, labels: &str) -> (tempfile::TempDir, DatasetPaths) {
        let dir = tempfile::tempdir().unwrap();
        let paths = DatasetPaths::in_dir(dir.path());
        fs::write(&paths.edges, edges).unwrap();
        fs::write(&paths.features, "1.0,0\n0,1.5\n-2e-3,3\n").unwrap();
        fs::write(&paths.labels, labels).unwrap();
        fs::write(&paths.splits, r#"{"splits":[{"train":[0],"val":[1],"test":[2]}]}"#).unwrap();
        (dir, paths)
    }

    #[test]
    fn loads_path_graph() {
        let (_dir, paths) = setup("# path\n0,1\n1,2\n", "node_id,label\n0,0\n1,1\n2,0\n");
        let ds = load_dataset(&paths, None).unwrap();
        assert_eq!(ds.graph.degrees(), vec![1, 2, 1]);
        assert_eq!(ds.n_classes, 2);
        assert_eq!(ds.features.get(2, 0), -2e-3);
        assert_eq!(load_dataset(&paths, Some(4)).unwrap().n_classes, 4);
    }

    #[test]
    fn reversed_duplicate_is_one_edge() {
        let (_dir, paths) = setup("0,1\n1,0\n", "0,0\n1,1\n2,0\n");
        assert_eq!(load_dataset(&paths, None).unwrap().graph.edges(), &[(0, 1)]);
    }

    #[test]
    fn errors_name_file_and_line() {
        let (_dir, paths) = setup("0,1\n5,1\n", "0,0\n1,1\n2,0\n");
        let msg = load_dataset(&paths, None).unwrap_err().to_string();
        assert!(msg.contains("edges.csv") && msg.contains(":2"), "{msg}");

        let (_dir, paths) = setup("0,1\n1;2\n", "0,0\n1,1\n2,0\n");
        let msg = load_dataset(&paths, None).unwrap_err().to_string();
        assert!(msg.contains("edges.csv") && msg.contains(":2"), "{msg}");

        let (_dir, paths) = setup("0,1\n", "0,0\n1,1\n1,0\n2,0\n");
        let msg = load_dataset(&paths, None).unwrap_err().to_string();
        assert!(msg.contains("labels.csv") && msg.contains(":3"), "{msg}");

        let (_dir, paths) = setup("0,1\n", "0,0\n2,0\n");
        assert!(matches!(load_dataset(&paths, None), Err(Error::MissingLabel(1))));
    }

    #[test]
    fn label_above_override_is_rejected() {
        let (_dir, paths) = setup("0,1\n", "0,0\n1,3\n2,0\n");
        assert!(matches!(
            load_dataset(&paths, Some(2)),
            Err(Error::LabelOutOfRange { node: 1, label: 3, .. })
        ));
    }

    #[test]
    fn round_trip() {
        let (_dir, paths) = setup("0,1\n1,2\n2,0\n", "0,0\n1,1\n2,0\n");
        let ds = load_dataset(&paths, None).unwrap();
        let out = tempfile::tempdir().unwrap();
        let paths2 = DatasetPaths::in_dir(out.path().join("copy"));
        save_dataset(&paths2, &ds).unwrap();
        assert_eq!(load_dataset(&paths2, None).unwrap(), ds);
    }
}
