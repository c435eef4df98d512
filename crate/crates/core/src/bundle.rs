//! Graph bundle directories: `meta.json`, `edges.tsv`, `features.bin`,
//! `labels.tsv`, optional `texts.jsonl` and per-seed `splits.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ClassSpace, GraphError, SplitAssignment, TagGraph};

pub const FEATURES_MAGIC: &[u8; 4] = b"TAGF";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> BundleError + '_ {
    move |e| BundleError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn invalid(path: &Path, message: impl Into<String>) -> BundleError {
    BundleError::Invalid {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub dataset: String,
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub class_names: Vec<String>,
    pub id_class_indices: Vec<usize>,
    /// Extra manifest fields, preserved verbatim.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub meta: BundleMeta,
    pub graph: TagGraph,
    pub classes: ClassSpace,
}

/// Writes `TAGF`, u32 LE rows, u32 LE cols, then row-major f32 LE values.
pub fn write_features<W: Write>(mut w: W, features: &Array2<f64>) -> std::io::Result<()> {
    let dim = |n: usize| {
        u32::try_from(n).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32"))
    };
    w.write_all(FEATURES_MAGIC)?;
    w.write_all(&dim(features.nrows())?.to_le_bytes())?;
    w.write_all(&dim(features.ncols())?.to_le_bytes())?;
    for v in features.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()
}

/// Reads a `features.bin` stream, widening values to f64.
pub fn read_features<R: Read>(mut r: R) -> Result<Array2<f64>, String> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header).map_err(|_| "truncated header".to_string())?;
    if &header[..4] != FEATURES_MAGIC {
        return Err(format!("bad magic {:?}", &header[..4]));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    let len = rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or("size overflow")?;
    let mut payload = Vec::with_capacity(len);
    r.read_to_end(&mut payload).map_err(|e| e.to_string())?;
    if payload.len() != len {
        return Err(format!("expected {len} payload bytes for {rows}x{cols}, found {}", payload.len()));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, BundleError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_usize_pair(path: &Path, line: usize, text: &str) -> Result<(usize, usize), BundleError> {
    let parse_err = |message: String| BundleError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut parts = text.split('\t');
    let mut next = || -> Result<usize, BundleError> {
        let field = parts.next().ok_or_else(|| parse_err("expected two tab-separated fields".into()))?;
        field.trim().parse().map_err(|e| parse_err(format!("`{field}`: {e}")))
    };
    let pair = (next()?, next()?);
    if parts.next().is_some() {
        return Err(parse_err("expected two tab-separated fields".into()));
    }
    Ok(pair)
}

#[derive(Serialize, Deserialize)]
struct TextLine {
    id: usize,
    text: String,
}

/// Loads and validates a bundle directory.
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<Bundle, BundleError> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: BundleMeta = serde_json::from_str(&meta_text).map_err(|e| BundleError::Parse {
        path: meta_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let n = meta.num_nodes;

    let feat_path = dir.join("features.bin");
    let file = fs::File::open(&feat_path).map_err(io_err(&feat_path))?;
    let features = read_features(BufReader::new(file)).map_err(|m| invalid(&feat_path, m))?;
    if features.ncols() != meta.feature_dim || features.nrows() != n {
        return Err(invalid(
            &feat_path,
            format!(
                "shape {}x{} disagrees with meta.json ({n}x{})",
                features.nrows(),
                features.ncols(),
                meta.feature_dim
            ),
        ));
    }

    let edge_path = dir.join("edges.tsv");
    let edges = read_lines(&edge_path)?
        .into_iter()
        .map(|(line, text)| parse_usize_pair(&edge_path, line, &text))
        .collect::<Result<Vec<_>, _>>()?;

    let label_path = dir.join("labels.tsv");
    let mut labels = vec![None; n];
    for (line, text) in read_lines(&label_path)? {
        let (node, class) = parse_usize_pair(&label_path, line, &text)?;
        let slot = labels.get_mut(node).ok_or_else(|| BundleError::Parse {
            path: label_path.clone(),
            line,
            message: format!("node {node} out of range"),
        })?;
        if slot.replace(class).is_some() {
            return Err(BundleError::Parse {
                path: label_path.clone(),
                line,
                message: format!("node {node} labeled twice"),
            });
        }
    }
    let missing: Vec<usize> = (0..n).filter(|&v| labels[v].is_none()).collect();
    if !missing.is_empty() {
        return Err(invalid(&label_path, format!("{} node(s) unlabeled, first {}", missing.len(), missing[0])));
    }
    let labels: Vec<usize> = labels.into_iter().map(|l| l.expect("checked")).collect();

    let text_path = dir.join("texts.jsonl");
    let texts = if text_path.exists() {
        let mut texts = vec![None; n];
        for (line, raw) in read_lines(&text_path)? {
            let t: TextLine = serde_json::from_str(&raw).map_err(|e| BundleError::Parse {
                path: text_path.clone(),
                line,
                message: e.to_string(),
            })?;
            let slot = texts.get_mut(t.id).ok_or_else(|| BundleError::Parse {
                path: text_path.clone(),
                line,
                message: format!("node {} out of range", t.id),
            })?;
            *slot = Some(t.text);
        }
        let missing: Vec<usize> = (0..n).filter(|&v| texts[v].is_none()).collect();
        if !missing.is_empty() {
            let shown: Vec<String> = missing.iter().take(10).map(|v| v.to_string()).collect();
            return Err(invalid(&text_path, format!("missing texts for node(s) {}", shown.join(", "))));
        }
        Some(texts.into_iter().map(|t| t.expect("checked")).collect())
    } else {
        None
    };

    let classes = ClassSpace::new(meta.class_names.clone(), meta.id_class_indices.clone())?;
    let graph = TagGraph::new(n, edges, features, labels, classes.num_classes(), texts)?;
    Ok(Bundle { meta, graph, classes })
}

/// Writes a bundle directory (features are stored as f32).
pub fn write_bundle(
    dir: impl AsRef<Path>,
    dataset: &str,
    graph: &TagGraph,
    classes: &ClassSpace,
) -> Result<BundleMeta, BundleError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = BundleMeta {
        dataset: dataset.to_string(),
        num_nodes: graph.num_nodes(),
        feature_dim: graph.feature_dim(),
        class_names: classes.class_names().to_vec(),
        id_class_indices: classes.id_class_indices().to_vec(),
        extra: BTreeMap::new(),
    };
    let write = |name: &str, f: &dyn Fn(&mut BufWriter<fs::File>) -> std::io::Result<()>| {
        let path = dir.join(name);
        let mut w = BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
        f(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))
    };
    write("meta.json", &|w| {
        serde_json::to_writer_pretty(&mut *w, &meta)?;
        writeln!(w)
    })?;
    write("edges.tsv", &|w| {
        for (a, b) in graph.edges() {
            writeln!(w, "{a}\t{b}")?;
        }
        Ok(())
    })?;
    write("features.bin", &|w| write_features(&mut *w, graph.features()))?;
    write("labels.tsv", &|w| {
        for (v, c) in graph.labels().iter().enumerate() {
            writeln!(w, "{v}\t{c}")?;
        }
        Ok(())
    })?;
    if let Some(texts) = graph.texts() {
        write("texts.jsonl", &|w| {
            for (id, text) in texts.iter().enumerate() {
                serde_json::to_writer(&mut *w, &TextLine { id, text: text.clone() })?;
                writeln!(w)?;
            }
            Ok(())
        })?;
    }
    Ok(meta)
}

pub fn write_splits(path: impl AsRef<Path>, splits: &SplitAssignment) -> Result<(), BundleError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(splits).map_err(|e| invalid(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Reads `splits.json` and checks it against a graph of `num_nodes` nodes.
pub fn read_splits(path: impl AsRef<Path>, num_nodes: usize) -> Result<SplitAssignment, BundleError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let splits: SplitAssignment = serde_json::from_str(&text).map_err(|e| BundleError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    splits.validate(num_nodes)?;
    Ok(splits)
}
