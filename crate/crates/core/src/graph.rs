//! Dense edge-attributed graph representation.
//!
//! A [`Graph`] is a pair `(x, e)` where `x` is the `n×u` node-attribute
//! matrix and `e` the `n×n×v` edge-attribute tensor; entry `(i, j, ·)`
//! describes the directed edge `i→j`. Binary adjacency is recovered from
//! `e` by thresholding the per-edge max channel magnitude, which is the
//! only notion of "edge exists" used anywhere in this crate.

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::error::{EdgeDiffError, Result};

/// Default threshold for recovering adjacency from edge features.
pub const DEFAULT_MASK_EPS: f64 = 0.01;

/// A directed graph with dense node and edge attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    /// Node attributes, shape `n×u`.
    pub x: Array2<f64>,
    /// Edge attributes, shape `n×n×v`; `e[[i, j, k]]` is channel `k` of edge `i→j`.
    pub e: Array3<f64>,
}

/// Binary adjacency recovered from edge features.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    pub a: Array2<f64>,
}

impl Graph {
    /// Build a graph, validating the shape contract and finiteness.
    pub fn new(x: Array2<f64>, e: Array3<f64>) -> Result<Self> {
        let n = x.nrows();
        if e.shape()[0] != n || e.shape()[1] != n {
            return Err(EdgeDiffError::shape(
                format!("{n}x{n}xv"),
                format!("{}x{}x{}", e.shape()[0], e.shape()[1], e.shape()[2]),
                "edge tensor leading dims must match node count",
            ));
        }
        if x.iter().any(|v| !v.is_finite()) || e.iter().any(|v| !v.is_finite()) {
            return Err(EdgeDiffError::invalid("graph contains non-finite entries"));
        }
        Ok(Graph { x, e })
    }

    /// All-zero graph of the given shape.
    pub fn zeros(n: usize, u: usize, v: usize) -> Self {
        Graph {
            x: Array2::zeros((n, u)),
            e: Array3::zeros((n, n, v)),
        }
    }

    /// Graph filled with i.i.d. standard normal entries.
    pub fn standard_normal(n: usize, u: usize, v: usize, rng: &mut (impl Rng + ?Sized)) -> Self {
        let x = Array2::from_shape_simple_fn((n, u), || rng.sample(StandardNormal));
        let e = Array3::from_shape_simple_fn((n, n, v), || rng.sample(StandardNormal));
        Graph { x, e }
    }

    /// Zero out every entry touching a masked-off node: `x` rows and both
    /// `e` rows and columns where `mask[i]` is false.
    pub fn zero_masked(&mut self, mask: &[bool]) -> Result<()> {
        let n = self.n();
        if mask.len() != n {
            return Err(EdgeDiffError::invalid(format!(
                "mask length {} does not match node count {n}",
                mask.len()
            )));
        }
        for (i, &keep) in mask.iter().enumerate() {
            if keep {
                continue;
            }
            self.x.row_mut(i).fill(0.0);
            self.e.index_axis_mut(ndarray::Axis(0), i).fill(0.0);
            self.e.index_axis_mut(ndarray::Axis(1), i).fill(0.0);
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn node_channels(&self) -> usize {
        self.x.ncols()
    }

    pub fn edge_channels(&self) -> usize {
        self.e.shape()[2]
    }

    /// Relabel nodes: node `i` becomes node `perm[i]`.
    ///
    /// `x'[perm[i]] = x[i]` and `e'[perm[i]][perm[j]] = e[i][j]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.n();
        if perm.len() != n {
            return Err(EdgeDiffError::invalid(format!(
                "permutation length {} does not match node count {n}",
                perm.len()
            )));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(EdgeDiffError::invalid("not a permutation"));
            }
            seen[p] = true;
        }
        let u = self.node_channels();
        let v = self.edge_channels();
        let mut x = Array2::zeros((n, u));
        let mut e = Array3::zeros((n, n, v));
        for i in 0..n {
            for c in 0..u {
                x[[perm[i], c]] = self.x[[i, c]];
            }
            for j in 0..n {
                for k in 0..v {
                    e[[perm[i], perm[j], k]] = self.e[[i, j, k]];
                }
            }
        }
        Ok(Graph { x, e })
    }
}

/// Recover binary adjacency: `a[i][j] = 1` iff `max_k |e[i][j][k]| >= eps`.
pub fn adjacency_mask(e: &Array3<f64>, eps: f64) -> Result<AdjacencyMatrix> {
    if eps <= 0.0 {
        return Err(EdgeDiffError::invalid("mask eps must be positive"));
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(EdgeDiffError::invalid(
            "edge tensor contains non-finite entries",
        ));
    }
    let n = e.shape()[0];
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mx = (0..e.shape()[2])
                .map(|k| e[[i, j, k]].abs())
                .fold(0.0f64, f64::max);
            if mx >= eps {
                a[[i, j]] = 1.0;
            }
        }
    }
    Ok(AdjacencyMatrix { a })
}

/// Symmetric degree normalization `Ā[i][j] = a[i][j] / sqrt(d_i d_j)` with
/// `d_i = max(1, in-degree + out-degree)` so isolated nodes stay at zero.
pub fn degree_normalize(adj: &AdjacencyMatrix) -> Array2<f64> {
    let n = adj.a.nrows();
    let mut deg = vec![0.0f64; n];
    for i in 0..n {
        for j in 0..n {
            if adj.a[[i, j]] != 0.0 {
                deg[i] += 1.0; // out-degree of i
                deg[j] += 1.0; // in-degree of j
            }
        }
    }
    for d in &mut deg {
        *d = d.max(1.0);
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if adj.a[[i, j]] != 0.0 {
                out[[i, j]] = 1.0 / (deg[i] * deg[j]).sqrt();
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Graphs zero-padded to a common node count, with per-graph node masks.
///
/// Padded rows and padded edge entries are exactly zero; masked positions
/// are excluded from losses and metrics by every consumer.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub graphs: Vec<Graph>,
    /// `masks[g][i] == true` iff node `i` of padded graph `g` is real.
    pub masks: Vec<Vec<bool>>,
    pub n_max: usize,
}

impl GraphBatch {
    /// Pad a set of graphs to a common size. All graphs must share `u` and `v`.
    pub fn from_graphs(graphs: &[Graph]) -> Result<GraphBatch> {
        if graphs.is_empty() {
            return Err(EdgeDiffError::invalid("empty batch"));
        }
        let u = graphs[0].node_channels();
        let v = graphs[0].edge_channels();
        let n_max = graphs.iter().map(Graph::n).max().unwrap();
        let mut padded = Vec::with_capacity(graphs.len());
        let mut masks = Vec::with_capacity(graphs.len());
        for g in graphs {
            if g.node_channels() != u || g.edge_channels() != v {
                return Err(EdgeDiffError::shape(
                    format!("u={u}, v={v}"),
                    format!("u={}, v={}", g.node_channels(), g.edge_channels()),
                    "all graphs in a batch must share channel counts",
                ));
            }
            let n = g.n();
            let mut x = Array2::zeros((n_max, u));
            let mut e = Array3::zeros((n_max, n_max, v));
            x.slice_mut(ndarray::s![..n, ..]).assign(&g.x);
            e.slice_mut(ndarray::s![..n, ..n, ..]).assign(&g.e);
            let mut mask = vec![false; n_max];
            mask[..n].fill(true);
            padded.push(Graph { x, e });
            masks.push(mask);
        }
        Ok(GraphBatch {
            graphs: padded,
            masks,
            n_max,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Serialization: line-delimited JSON records
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    n: usize,
    u: usize,
    v: usize,
    x: Vec<Vec<f64>>,
    e: Vec<Vec<Vec<f64>>>,
}

/// Dataset directory metadata (`meta.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    pub count_train: usize,
    pub count_test: usize,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
}

/// Serialize one graph as a single JSON line.
pub fn to_json_line(g: &Graph) -> String {
    let n = g.n();
    let u = g.node_channels();
    let v = g.edge_channels();
    let rec = GraphRecord {
        n,
        u,
        v,
        x: g.x.outer_iter().map(|r| r.to_vec()).collect(),
        e: g.e
            .outer_iter()
            .map(|row| row.outer_iter().map(|c| c.to_vec()).collect())
            .collect(),
    };
    serde_json::to_string(&rec).expect("graph record serializes")
}

fn record_to_graph(rec: GraphRecord, line: usize) -> Result<Graph> {
    let parse_err = |message: String| EdgeDiffError::Parse { line, message };
    if rec.x.len() != rec.n {
        return Err(parse_err(format!(
            "field x: expected {} rows, got {}",
            rec.n,
            rec.x.len()
        )));
    }
    if rec.e.len() != rec.n {
        return Err(parse_err(format!(
            "field e: expected {} rows, got {}",
            rec.n,
            rec.e.len()
        )));
    }
    let mut x = Array2::zeros((rec.n, rec.u));
    for (i, row) in rec.x.iter().enumerate() {
        if row.len() != rec.u {
            return Err(parse_err(format!(
                "field x row {i}: expected {} entries, got {}",
                rec.u,
                row.len()
            )));
        }
        for (c, val) in row.iter().enumerate() {
            x[[i, c]] = *val;
        }
    }
    let mut e = Array3::zeros((rec.n, rec.n, rec.v));
    for (i, row) in rec.e.iter().enumerate() {
        if row.len() != rec.n {
            return Err(parse_err(format!(
                "field e row {i}: expected {} entries, got {}",
                rec.n,
                row.len()
            )));
        }
        for (j, cell) in row.iter().enumerate() {
            if cell.len() != rec.v {
                return Err(parse_err(format!(
                    "field e[{i}][{j}]: expected {} channels, got {}",
                    rec.v,
                    cell.len()
                )));
            }
            for (k, val) in cell.iter().enumerate() {
                e[[i, j, k]] = *val;
            }
        }
    }
    Graph::new(x, e).map_err(|err| parse_err(err.to_string()))
}

/// Parse one JSON line into a graph. `line` is used for error context.
pub fn from_json_line(s: &str, line: usize) -> Result<Graph> {
    let rec: GraphRecord = serde_json::from_str(s).map_err(|e| EdgeDiffError::Parse {
        line,
        message: e.to_string(),
    })?;
    record_to_graph(rec, line)
}

/// Write graphs as JSONL, one record per line.
pub fn write_jsonl(path: &Path, graphs: &[Graph]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for g in graphs {
        writeln!(w, "{}", to_json_line(g))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a JSONL graph file. An empty file yields an empty dataset.
pub fn read_jsonl(path: &Path) -> Result<Vec<Graph>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut graphs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        graphs.push(from_json_line(&line, idx + 1)?);
    }
    Ok(graphs)
}

/// Load `train.jsonl`, `test.jsonl`, and `meta.json` from a dataset directory.
pub fn read_dataset_dir(dir: &Path) -> Result<(Vec<Graph>, Vec<Graph>, DatasetMeta)> {
    let train = read_jsonl(&dir.join("train.jsonl"))?;
    let test = read_jsonl(&dir.join("test.jsonl"))?;
    let meta_raw = std::fs::read_to_string(dir.join("meta.json"))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_raw).map_err(|e| EdgeDiffError::Parse {
        line: 0,
        message: format!("meta.json: {e}"),
    })?;
    Ok((train, test, meta))
}

/// Write a dataset directory in the standard layout.
pub fn write_dataset_dir(
    dir: &Path,
    train: &[Graph],
    test: &[Graph],
    meta: &DatasetMeta,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join("train.jsonl"), train)?;
    write_jsonl(&dir.join("test.jsonl"), test)?;
    let meta_json = serde_json::to_string_pretty(meta).expect("meta serializes");
    std::fs::write(dir.join("meta.json"), meta_json)?;
    Ok(())
}

/// Sum of each axis-2 slice's max-abs; cheap fingerprint used in tests.
pub fn max_abs_channel(e: &Array3<f64>) -> Array2<f64> {
    let n = e.shape()[0];
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = e
                .index_axis(Axis(0), i)
                .index_axis(Axis(0), j)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
        }
    }
    out
}
