//! Evaluation metrics.
//!
//! Squared MMD between histogram sets under a Gaussian total-variation
//! kernel, degree and clustering statistics, permutation-invariant graph
//! fingerprints for uniqueness/novelty, cluster homogeneity, and the six
//! MDP-maze measures (MV, MDV, VS, B, SF, E).

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{EdgeDiffError, Result};
use crate::graph::{adjacency_mask, Graph, DEFAULT_MASK_EPS};

/// Default tolerance for the MDP validity checks on continuous edges.
pub const DEFAULT_MDP_EPS: f64 = 0.01;

/// Rounds of label refinement used by [`fingerprint`].
const WL_ROUNDS: usize = 5;

/// Number of uniform bins used by [`cluster_stats`].
const CLUSTER_BINS: usize = 100;

// ---------------------------------------------------------------------------
// MMD
// ---------------------------------------------------------------------------

/// Gaussian kernel over total-variation distance between histograms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Bandwidth of the Gaussian: `k(a, b) = exp(-tv(a, b)^2 / (2 sigma^2))`.
    pub sigma: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { sigma: 1.0 }
    }
}

impl KernelSpec {
    /// Check the bandwidth invariant.
    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(EdgeDiffError::invalid("kernel sigma must be positive"));
        }
        Ok(())
    }

    /// Kernel value between two normalized histograms.
    ///
    /// Histograms of different lengths are compared over the union support
    /// (the shorter one is implicitly zero-padded).
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let tv = total_variation(a, b);
        (-tv * tv / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Total-variation distance `0.5 * sum |a_i - b_i|` with zero padding.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    let get = |h: &[f64], i: usize| h.get(i).copied().unwrap_or(0.0);
    0.5 * (0..len).map(|i| (get(a, i) - get(b, i)).abs()).sum::<f64>()
}

/// Squared maximum mean discrepancy between two histogram sets.
///
/// Biased V-statistic: `mean k(a, a') + mean k(b, b') - 2 mean k(a, b)`
/// over all pairs, clamped at zero.
pub fn mmd(set_a: &[Vec<f64>], set_b: &[Vec<f64>], k: &KernelSpec) -> Result<f64> {
    k.validate()?;
    if set_a.is_empty() || set_b.is_empty() {
        return Err(EdgeDiffError::invalid("mmd requires non-empty sets"));
    }
    let mean_pairs = |xs: &[Vec<f64>], ys: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for x in xs {
            for y in ys {
                total += k.eval(x, y);
            }
        }
        total / (xs.len() * ys.len()) as f64
    };
    let value = mean_pairs(set_a, set_a) + mean_pairs(set_b, set_b)
        - 2.0 * mean_pairs(set_a, set_b);
    Ok(value.max(0.0))
}

// ---------------------------------------------------------------------------
// Degree and clustering statistics
// ---------------------------------------------------------------------------

/// Normalized histogram of total degree (in + out) per node.
///
/// Degrees are computed on the masked adjacency with self-loops excluded,
/// so the support is `0 ..= 2 (n - 1)` and the histogram has `2n - 1` bins.
pub fn degree_stats(g: &Graph) -> Result<Vec<f64>> {
    let adj = adjacency_mask(&g.e, DEFAULT_MASK_EPS)?;
    let n = g.n();
    let mut degree = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && adj.a[[i, j]] != 0.0 {
                degree[i] += 1; // out-degree of i
                degree[j] += 1; // in-degree of j
            }
        }
    }
    let mut hist = vec![0.0; 2 * n.saturating_sub(1) + 1];
    for d in degree {
        hist[d] += 1.0 / n as f64;
    }
    Ok(hist)
}

/// Normalized histogram of per-node clustering coefficients.
///
/// Coefficients are computed on the undirected projection of the masked
/// adjacency (an edge exists if either direction does; self-loops are
/// dropped) and binned into 100 uniform bins on `[0, 1]`.
pub fn cluster_stats(g: &Graph) -> Result<Vec<f64>> {
    let adj = adjacency_mask(&g.e, DEFAULT_MASK_EPS)?;
    let n = g.n();
    let und = |i: usize, j: usize| i != j && (adj.a[[i, j]] != 0.0 || adj.a[[j, i]] != 0.0);
    let mut hist = vec![0.0; CLUSTER_BINS];
    for i in 0..n {
        let neighbors: Vec<usize> = (0..n).filter(|&j| und(i, j)).collect();
        let d = neighbors.len();
        let coeff = if d < 2 {
            0.0
        } else {
            let mut closed = 0usize;
            for (a, &p) in neighbors.iter().enumerate() {
                for &q in &neighbors[a + 1..] {
                    if und(p, q) {
                        closed += 1;
                    }
                }
            }
            2.0 * closed as f64 / (d * (d - 1)) as f64
        };
        let bin = ((coeff * CLUSTER_BINS as f64) as usize).min(CLUSTER_BINS - 1);
        hist[bin] += 1.0 / n as f64;
    }
    Ok(hist)
}

// ---------------------------------------------------------------------------
// Fingerprints, uniqueness, novelty
// ---------------------------------------------------------------------------

/// Minimal FNV-1a accumulator over 64-bit words; stable across runs.
#[derive(Clone, Copy)]
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xCBF2_9CE4_8422_2325)
    }

    fn write(&mut self, word: u64) {
        for byte in word.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }

    fn finish(self) -> u64 {
        self.0
    }
}

fn hash_words(words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h = Fnv::new();
    for w in words {
        h.write(w);
    }
    h.finish()
}

/// Quantize an attribute to 3 decimal places for hashing.
fn quant(v: f64) -> u64 {
    ((v * 1000.0).round() as i64) as u64
}

/// Permutation-invariant canonical fingerprint of a graph.
///
/// Iterated label refinement over the masked adjacency: nodes start from a
/// hash of their attribute vector (quantized to 3 decimals), edge labels
/// hash the quantized edge attributes, and each round rehashes every node
/// with the sorted multisets of its labeled in- and out-neighborhoods.
/// The fingerprint is the hash of the sorted final labels.
pub fn fingerprint(g: &Graph) -> Result<u64> {
    let adj = adjacency_mask(&g.e, DEFAULT_MASK_EPS)?;
    let n = g.n();
    let mut labels: Vec<u64> = (0..n)
        .map(|i| hash_words(std::iter::once(0x4E4F_4445).chain(g.x.row(i).iter().map(|&v| quant(v)))))
        .collect();
    let edge_label = |i: usize, j: usize| -> u64 {
        let mut h = Fnv::new();
        h.write(0x4544_4745);
        for k in 0..g.edge_channels() {
            h.write(quant(g.e[[i, j, k]]));
        }
        h.finish()
    };
    let mut elab = vec![0u64; n * n];
    for i in 0..n {
        for j in 0..n {
            if adj.a[[i, j]] != 0.0 {
                elab[i * n + j] = edge_label(i, j);
            }
        }
    }
    for _ in 0..WL_ROUNDS {
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let mut outs: Vec<u64> = (0..n)
                .filter(|&j| adj.a[[i, j]] != 0.0)
                .map(|j| hash_words([elab[i * n + j], labels[j]]))
                .collect();
            let mut ins: Vec<u64> = (0..n)
                .filter(|&j| adj.a[[j, i]] != 0.0)
                .map(|j| hash_words([elab[j * n + i], labels[j]]))
                .collect();
            outs.sort_unstable();
            ins.sort_unstable();
            let mut h = Fnv::new();
            h.write(labels[i]);
            h.write(0x4F55_5453);
            for w in outs {
                h.write(w);
            }
            h.write(0x494E_5331);
            for w in ins {
                h.write(w);
            }
            next.push(h.finish());
        }
        labels = next;
    }
    labels.sort_unstable();
    Ok(hash_words(std::iter::once(n as u64).chain(labels)))
}

/// Percentage of distinct fingerprints in the generated set.
///
/// Duplicates collapse to one survivor: a set of N identical graphs scores
/// `100 / N`.
pub fn uniqueness(generated: &[Graph]) -> Result<f64> {
    if generated.is_empty() {
        return Err(EdgeDiffError::invalid("uniqueness requires a non-empty set"));
    }
    let mut seen = HashSet::new();
    for g in generated {
        seen.insert(fingerprint(g)?);
    }
    Ok(100.0 * seen.len() as f64 / generated.len() as f64)
}

/// Percentage of generated graphs whose fingerprint is absent from the
/// training set. Permuted copies of training graphs are not novel.
pub fn novelty(generated: &[Graph], train: &[Graph]) -> Result<f64> {
    if generated.is_empty() || train.is_empty() {
        return Err(EdgeDiffError::invalid("novelty requires non-empty sets"));
    }
    let train_prints: HashSet<u64> = train
        .iter()
        .map(fingerprint)
        .collect::<Result<_>>()?;
    let novel = generated
        .iter()
        .map(fingerprint)
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| !train_prints.contains(p))
        .count();
    Ok(100.0 * novel as f64 / generated.len() as f64)
}

// ---------------------------------------------------------------------------
// Homogeneity
// ---------------------------------------------------------------------------

/// Percentage of graphs whose edges all belong to one cluster.
///
/// Every ordered pair `i != j` of a (complete) graph is assigned to the
/// nearest center in Euclidean distance; exact ties go to the lowest
/// center index. A graph is homogeneous iff all its edges share one
/// assignment.
pub fn homogeneity(graphs: &[Graph], centers: &[[f64; 2]]) -> Result<f64> {
    if graphs.is_empty() || centers.is_empty() {
        return Err(EdgeDiffError::invalid(
            "homogeneity requires graphs and at least one center",
        ));
    }
    let mut homogeneous = 0usize;
    for g in graphs {
        if g.edge_channels() != 2 {
            return Err(EdgeDiffError::invalid(
                "homogeneity expects 2-channel edge attributes",
            ));
        }
        let n = g.n();
        let mut assignment: Option<usize> = None;
        let mut all_same = true;
        'edges: for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (ex, ey) = (g.e[[i, j, 0]], g.e[[i, j, 1]]);
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (c, center) in centers.iter().enumerate() {
                    let d = (ex - center[0]).powi(2) + (ey - center[1]).powi(2);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                match assignment {
                    None => assignment = Some(best),
                    Some(a) if a != best => {
                        all_same = false;
                        break 'edges;
                    }
                    Some(_) => {}
                }
            }
        }
        if all_same {
            homogeneous += 1;
        }
    }
    Ok(100.0 * homogeneous as f64 / graphs.len() as f64)
}

// ---------------------------------------------------------------------------
// MDP measures
// ---------------------------------------------------------------------------

/// The six MDP-maze measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdpReport {
    /// % of non-block nodes whose action-channel outgoing sums are valid.
    pub mv: f64,
    /// % of non-block nodes matching the non-deterministic edge pattern.
    pub mdv: f64,
    /// % of graphs with exactly one start, one finish, and a path between.
    pub vs: f64,
    /// Mean absolute deviation of the block count from 4.
    pub b: f64,
    /// Mean absolute deviation of the start+finish count from 2.
    pub sf: f64,
    /// Mean absolute deviation of the empty count from 19.
    pub e: f64,
}

/// Ground-truth cell counts of the 5x5, 4-block maze distribution.
const BLOCK_TARGET: f64 = 4.0;
const SF_TARGET: f64 = 2.0;
const EMPTY_TARGET: f64 = 19.0;

/// Decoded role of a maze node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeCategory {
    Block,
    Empty,
    Start,
    Finish,
}

/// Decode a node category by nearest anchor.
///
/// `c < -0.5` is a block, `-0.5 <= c < 0.5` empty; terminal values
/// (`c >= 0.5`) are a start when within 0.05 of 1 and a finish otherwise.
pub fn decode_category(c: f64) -> NodeCategory {
    if c < -0.5 {
        NodeCategory::Block
    } else if c < 0.5 {
        NodeCategory::Empty
    } else if (c - 1.0).abs() <= 0.05 {
        NodeCategory::Start
    } else {
        NodeCategory::Finish
    }
}

/// Snap sampled MDP edge values onto the transition-probability grid.
///
/// Every edge channel is rounded to the nearest multiple of 0.1 and clamped
/// to `[0, 1]`; node channels are left untouched. Reverse-time sampling
/// leaves residual noise of the order of the final step size on every entry,
/// which would otherwise make near-zero edges read as present under the
/// adjacency threshold. Evaluation of generated MDP graphs therefore runs on
/// the quantized copy; exact generator output is a fixed point.
pub fn quantize_mdp(g: &Graph) -> Graph {
    let mut out = g.clone();
    out.e.mapv_inplace(|v| ((v * 10.0).round() / 10.0).clamp(0.0, 1.0));
    out
}

/// Per-channel check of the non-deterministic transition pattern.
///
/// A channel row matches when, up to `eps`, its entries consist of `k`
/// values at 0.1, one value at `1 - 0.1 k`, and zeros elsewhere.
fn channel_matches_nondet(row: &[f64], eps: f64) -> bool {
    let mut tenths = 0usize;
    let mut big = Vec::new();
    for &v in row {
        if v.abs() <= eps {
            continue;
        }
        if (v - 0.1).abs() <= eps {
            tenths += 1;
        } else {
            big.push(v);
        }
    }
    big.len() == 1 && (big[0] - (1.0 - 0.1 * tenths as f64)).abs() <= eps
}

/// Compute the six MDP measures over a generated set.
///
/// Graphs must have 25 nodes, 3 node channels, and 4 edge channels. In
/// deterministic mode the edge values are rounded to the nearest integer
/// before the MV sums are checked against 1 (tolerance 1e-9); in
/// non-deterministic mode raw values are compared within `eps`.
pub fn mdp_metrics(graphs: &[Graph], deterministic: bool, eps: f64) -> Result<MdpReport> {
    if graphs.is_empty() {
        return Err(EdgeDiffError::invalid("mdp_metrics requires a non-empty set"));
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(EdgeDiffError::invalid("mdp eps must be positive"));
    }
    for g in graphs {
        if g.n() != 25 || g.node_channels() != 3 || g.edge_channels() != 4 {
            return Err(EdgeDiffError::shape(
                "25 nodes, 3 node channels, 4 edge channels",
                format!(
                    "{} nodes, {} node channels, {} edge channels",
                    g.n(),
                    g.node_channels(),
                    g.edge_channels()
                ),
                "mdp_metrics input",
            ));
        }
    }

    let mut nodes_total = 0usize;
    let mut nodes_mv = 0usize;
    let mut nodes_mdv = 0usize;
    let mut graphs_vs = 0usize;
    let (mut b_sum, mut sf_sum, mut e_sum) = (0.0, 0.0, 0.0);

    for g in graphs {
        let n = g.n();
        let cats: Vec<NodeCategory> = (0..n).map(|i| decode_category(g.x[[i, 0]])).collect();
        let count = |c: NodeCategory| cats.iter().filter(|&&x| x == c).count();
        let (blocks, starts, finishes, empties) = (
            count(NodeCategory::Block),
            count(NodeCategory::Start),
            count(NodeCategory::Finish),
            count(NodeCategory::Empty),
        );
        b_sum += (blocks as f64 - BLOCK_TARGET).abs();
        sf_sum += ((starts + finishes) as f64 - SF_TARGET).abs();
        e_sum += (empties as f64 - EMPTY_TARGET).abs();

        for i in 0..n {
            if cats[i] == NodeCategory::Block {
                continue;
            }
            nodes_total += 1;
            let mut mv_ok = true;
            let mut mdv_ok = true;
            for a in 0..4 {
                let row: Vec<f64> = (0..n).map(|j| g.e[[i, j, a]]).collect();
                let (sum, tol) = if deterministic {
                    (row.iter().map(|v| v.round()).sum::<f64>(), 1e-9)
                } else {
                    (row.iter().sum::<f64>(), eps)
                };
                if (sum - 1.0).abs() > tol {
                    mv_ok = false;
                }
                if !channel_matches_nondet(&row, eps) {
                    mdv_ok = false;
                }
            }
            if mv_ok {
                nodes_mv += 1;
            }
            if mdv_ok {
                nodes_mdv += 1;
            }
        }

        // VS: exactly one start and one finish, connected by a directed
        // path over non-block nodes in the masked adjacency.
        if starts == 1 && finishes == 1 {
            let adj = adjacency_mask(&g.e, DEFAULT_MASK_EPS)?;
            let start = cats.iter().position(|&c| c == NodeCategory::Start).unwrap();
            let finish = cats.iter().position(|&c| c == NodeCategory::Finish).unwrap();
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(c) = queue.pop_front() {
                if c == finish {
                    break;
                }
                for j in 0..n {
                    if !seen[j] && adj.a[[c, j]] != 0.0 && cats[j] != NodeCategory::Block {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            if seen[finish] {
                graphs_vs += 1;
            }
        }
    }

    let node_pct = |count: usize| {
        if nodes_total == 0 {
            0.0
        } else {
            100.0 * count as f64 / nodes_total as f64
        }
    };
    let n_graphs = graphs.len() as f64;
    Ok(MdpReport {
        mv: node_pct(nodes_mv),
        mdv: node_pct(nodes_mdv),
        vs: 100.0 * graphs_vs as f64 / n_graphs,
        b: b_sum / n_graphs,
        sf: sf_sum / n_graphs,
        e: e_sum / n_graphs,
    })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Full evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Squared MMD between degree histograms.
    pub deg: f64,
    /// Squared MMD between clustering-coefficient histograms.
    pub cl: f64,
    /// Uniqueness percentage.
    pub uniqueness: f64,
    /// Novelty percentage.
    pub novelty: f64,
    /// Cluster homogeneity percentage, when applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homogeneity: Option<f64>,
    /// MDP measures, when applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdp: Option<MdpReport>,
}

impl MetricReport {
    /// Render as an aligned two-row text table.
    pub fn to_table(&self) -> String {
        let mut cols: Vec<(String, String)> = vec![
            ("deg".into(), format!("{:.4}", self.deg)),
            ("cl".into(), format!("{:.4}", self.cl)),
            ("un".into(), format!("{:.2}", self.uniqueness)),
            ("no".into(), format!("{:.2}", self.novelty)),
        ];
        if let Some(h) = self.homogeneity {
            cols.push(("homog".into(), format!("{h:.2}")));
        }
        if let Some(m) = self.mdp {
            cols.push(("MV".into(), format!("{:.2}", m.mv)));
            cols.push(("MDV".into(), format!("{:.2}", m.mdv)));
            cols.push(("VS".into(), format!("{:.2}", m.vs)));
            cols.push(("B".into(), format!("{:.4}", m.b)));
            cols.push(("SF".into(), format!("{:.4}", m.sf)));
            cols.push(("E".into(), format!("{:.4}", m.e)));
        }
        let mut header = String::new();
        let mut values = String::new();
        for (i, (name, value)) in cols.iter().enumerate() {
            let w = name.len().max(value.len());
            if i > 0 {
                header.push_str("  ");
                values.push_str("  ");
            }
            header.push_str(&format!("{name:>w$}"));
            values.push_str(&format!("{value:>w$}"));
        }
        format!("{header}\n{values}\n")
    }
}

/// Degree- and clustering-MMD between two graph sets plus uniqueness and
/// novelty of the first against the second.
pub fn general_report(
    generated: &[Graph],
    reference: &[Graph],
    kernel: &KernelSpec,
) -> Result<MetricReport> {
    let gen_deg = generated.iter().map(degree_stats).collect::<Result<Vec<_>>>()?;
    let ref_deg = reference.iter().map(degree_stats).collect::<Result<Vec<_>>>()?;
    let gen_cl = generated.iter().map(cluster_stats).collect::<Result<Vec<_>>>()?;
    let ref_cl = reference.iter().map(cluster_stats).collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        deg: mmd(&gen_deg, &ref_deg, kernel)?,
        cl: mmd(&gen_cl, &ref_cl, kernel)?,
        uniqueness: uniqueness(generated)?,
        novelty: novelty(generated, reference)?,
        homogeneity: None,
        mdp: None,
    })
}
