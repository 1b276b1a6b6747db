//! Dataset generators and splitting.
//!
//! Provides the synthetic corpora used throughout the crate:
//!
//! * [`gen_clusters`] — complete directed graphs whose 2-channel edge
//!   attributes are drawn from one of two Gaussian clusters per graph;
//! * [`gen_maze`] / [`gen_maze_dataset`] — 5x5 MDP grid mazes in a
//!   deterministic and a non-deterministic variant;
//! * [`augment_path_counts`] — appends a walk-count edge channel;
//! * [`gen_sbm`] / [`gen_grid2d`] — undirected structure-only graphs;
//! * [`split`] — seeded, order-stable train/test split.
//!
//! All generators are pure functions of their seeds, so datasets are
//! reproducible and independent graphs may be generated in any order.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{EdgeDiffError, Result};
use crate::graph::{adjacency_mask, Graph, DEFAULT_MASK_EPS};

/// Maximum rejection-sampling attempts before maze generation gives up.
pub const MAZE_MAX_ATTEMPTS: usize = 10_000;

/// Derive an independent per-item seed from a base seed.
///
/// Used wherever a dataset is produced item-by-item so that generation is
/// order-independent: item `i` sees the same stream regardless of how many
/// other items were generated before it (or on which thread).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined value; cheap and well mixed.
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Gaussian-cluster complete graphs
// ---------------------------------------------------------------------------

/// Specification for the two-cluster complete-graph dataset.
///
/// Each graph is a complete directed graph on `n_nodes` nodes with a single
/// constant node channel (value 0) and 2-channel edge attributes drawn
/// i.i.d. from one of the two Gaussian clusters; the cluster is chosen
/// uniformly per graph, so every edge of a graph belongs to the same
/// cluster by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    /// Number of graphs to generate.
    pub n_graphs: usize,
    /// Nodes per graph.
    pub n_nodes: usize,
    /// The two cluster centers in R^2.
    pub centers: [[f64; 2]; 2],
    /// Isotropic standard deviation shared by both clusters.
    pub std: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            n_graphs: 1000,
            n_nodes: 10,
            centers: [[0.5, 0.5], [-0.5, -0.5]],
            std: 0.12,
        }
    }
}

impl ClusterSpec {
    /// Check the spec invariants.
    ///
    /// Both centers must clear the default adjacency-mask threshold so that
    /// generated graphs read back as complete under [`adjacency_mask`].
    pub fn validate(&self) -> Result<()> {
        if self.n_graphs == 0 {
            return Err(EdgeDiffError::invalid("n_graphs must be positive"));
        }
        if self.n_nodes < 2 {
            return Err(EdgeDiffError::invalid("n_nodes must be at least 2"));
        }
        if !self.std.is_finite() || self.std < 0.0 {
            return Err(EdgeDiffError::invalid("cluster std must be finite and >= 0"));
        }
        for c in &self.centers {
            if c.iter().any(|v| !v.is_finite()) {
                return Err(EdgeDiffError::invalid("cluster centers must be finite"));
            }
            if c.iter().fold(0.0f64, |m, v| m.max(v.abs())) < DEFAULT_MASK_EPS {
                return Err(EdgeDiffError::invalid(
                    "cluster centers must have magnitude >= the mask threshold",
                ));
            }
        }
        Ok(())
    }
}

/// Generate the two-cluster complete-graph dataset.
///
/// Each graph picks one of the two clusters uniformly at random; every
/// ordered pair `i != j` then receives an edge vector `center + std * z`
/// with `z ~ N(0, I_2)`. Node features are a single all-zero channel.
pub fn gen_clusters(spec: &ClusterSpec, rng: &mut (impl Rng + ?Sized)) -> Result<Vec<Graph>> {
    spec.validate()?;
    let n = spec.n_nodes;
    let mut out = Vec::with_capacity(spec.n_graphs);
    for _ in 0..spec.n_graphs {
        let center = spec.centers[rng.random_range(0..2usize)];
        let mut e = Array3::zeros((n, n, 2));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                for (k, c) in center.iter().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    e[[i, j, k]] = c + spec.std * z;
                }
            }
        }
        out.push(Graph::new(Array2::zeros((n, 1)), e)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// MDP grid mazes
// ---------------------------------------------------------------------------

/// Edge-channel order for maze actions: the stored 4-vector is
/// `(left, right, up, down)`.
///
/// "Up" means decreasing row; the node at grid cell `(row, col)` has index
/// `row * side + col`, with `(0, 0)` the top-left corner.
pub const MAZE_ACTIONS: [&str; 4] = ["left", "right", "up", "down"];

/// Per-action `(d_row, d_col)` offsets in [`MAZE_ACTIONS`] order.
const ACTION_OFFSETS: [(isize, isize); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

/// Node-category encoding used in the first node channel.
pub const CAT_BLOCK: f64 = -1.0;
/// Category value of an empty walkable cell.
pub const CAT_EMPTY: f64 = 0.0;
/// Category value of the start cell.
pub const CAT_START: f64 = 1.0;
/// Finish-cell categories are drawn uniformly from `[FINISH_LO, FINISH_HI)`.
pub const FINISH_LO: f64 = 0.5;
/// Exclusive upper bound of the finish-category draw; values at or above
/// this would decode as "start" under the evaluation thresholds.
pub const FINISH_HI: f64 = 0.95;

/// Specification for one MDP grid maze.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MazeSpec {
    /// Grid side length; the maze has `side * side` cells.
    pub side: usize,
    /// Number of block cells.
    pub n_blocks: usize,
    /// Number of start cells.
    pub n_start: usize,
    /// Number of finish cells.
    pub n_finish: usize,
    /// Deterministic transition probabilities (true) or the noisy
    /// 1 - 0.1*(z-1) / 0.1 scheme (false).
    pub deterministic: bool,
    /// Base seed for dataset-level generation.
    pub seed: u64,
}

impl Default for MazeSpec {
    fn default() -> Self {
        MazeSpec {
            side: 5,
            n_blocks: 4,
            n_start: 1,
            n_finish: 1,
            deterministic: true,
            seed: 0,
        }
    }
}

impl MazeSpec {
    /// Check basic invariants. Whether a solvable placement exists is not
    /// decided here; generation reports failure after bounded rejection.
    pub fn validate(&self) -> Result<()> {
        if self.side < 2 {
            return Err(EdgeDiffError::invalid("maze side must be at least 2"));
        }
        if self.n_start == 0 || self.n_finish == 0 {
            return Err(EdgeDiffError::invalid(
                "mazes need at least one start and one finish cell",
            ));
        }
        Ok(())
    }

    fn cells(&self) -> usize {
        self.side * self.side
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cell {
    Empty,
    Block,
    Start,
    Finish,
}

/// Sampled maze layout: cell categories plus the finish-category values.
struct Layout {
    cells: Vec<Cell>,
    finish_values: Vec<f64>,
    side: usize,
}

impl Layout {
    fn at(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.side + col]
    }

    /// In-grid, non-block neighbor of (row, col) along `action`, if any.
    fn admissible(&self, row: usize, col: usize, action: usize) -> Option<usize> {
        let (dr, dc) = ACTION_OFFSETS[action];
        let nr = row as isize + dr;
        let nc = col as isize + dc;
        if nr < 0 || nc < 0 || nr >= self.side as isize || nc >= self.side as isize {
            return None;
        }
        let (nr, nc) = (nr as usize, nc as usize);
        if self.at(nr, nc) == Cell::Block {
            None
        } else {
            Some(nr * self.side + nc)
        }
    }

    /// Every start can reach at least one finish through non-block cells.
    fn solvable(&self) -> bool {
        let n = self.cells.len();
        let starts: Vec<usize> = (0..n).filter(|&i| self.cells[i] == Cell::Start).collect();
        for &s in &starts {
            let mut seen = vec![false; n];
            let mut queue = std::collections::VecDeque::from([s]);
            seen[s] = true;
            let mut found = false;
            while let Some(c) = queue.pop_front() {
                if self.cells[c] == Cell::Finish {
                    found = true;
                    break;
                }
                let (row, col) = (c / self.side, c % self.side);
                for action in 0..4 {
                    if let Some(nb) = self.admissible(row, col, action) {
                        if !seen[nb] {
                            seen[nb] = true;
                            queue.push_back(nb);
                        }
                    }
                }
            }
            if !found {
                return false;
            }
        }
        true
    }
}

/// Build the graph representation of a laid-out maze.
fn maze_from_layout(layout: &Layout, deterministic: bool) -> Result<Graph> {
    let side = layout.side;
    let n = layout.cells.len();
    let half = (side - 1) as f64 / 2.0;

    let mut x = Array2::zeros((n, 3));
    let mut finish_idx = 0usize;
    for row in 0..side {
        for col in 0..side {
            let i = row * side + col;
            x[[i, 0]] = match layout.at(row, col) {
                Cell::Block => CAT_BLOCK,
                Cell::Empty => CAT_EMPTY,
                Cell::Start => CAT_START,
                Cell::Finish => {
                    let v = layout.finish_values[finish_idx];
                    finish_idx += 1;
                    v
                }
            };
            x[[i, 1]] = (col as f64 - half) / half;
            x[[i, 2]] = (row as f64 - half) / half;
        }
    }

    let mut e = Array3::zeros((n, n, 4));
    for row in 0..side {
        for col in 0..side {
            let i = row * side + col;
            if layout.at(row, col) == Cell::Block {
                continue; // block cells have no outgoing edges
            }
            let admissible: Vec<Option<usize>> = (0..4)
                .map(|a| layout.admissible(row, col, a))
                .collect();
            let z = admissible.iter().flatten().count();
            for (action, intended) in admissible.iter().enumerate() {
                match intended {
                    None => {
                        // Off-grid or blocked: the move fails and the agent
                        // stays in place with probability 1.
                        e[[i, i, action]] = 1.0;
                    }
                    Some(target) if deterministic => {
                        e[[i, *target, action]] = 1.0;
                    }
                    Some(target) => {
                        e[[i, *target, action]] = 1.0 - 0.1 * (z as f64 - 1.0);
                        for other in admissible.iter().flatten() {
                            if other != target {
                                e[[i, *other, action]] = 0.1;
                            }
                        }
                    }
                }
            }
        }
    }

    Graph::new(x, e)
}

/// Generate one solvable MDP grid maze.
///
/// Cell categories are placed uniformly at random; layouts without a path
/// from every start to some finish are rejected and resampled, up to
/// [`MAZE_MAX_ATTEMPTS`] times before a generation error is returned.
pub fn gen_maze(spec: &MazeSpec, rng: &mut (impl Rng + ?Sized)) -> Result<Graph> {
    spec.validate()?;
    let n = spec.cells();
    let special = spec.n_blocks + spec.n_start + spec.n_finish;
    for _ in 0..MAZE_MAX_ATTEMPTS {
        if special > n {
            continue; // unsatisfiable placement; count against the budget
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut cells = vec![Cell::Empty; n];
        for &c in &order[..spec.n_blocks] {
            cells[c] = Cell::Block;
        }
        for &c in &order[spec.n_blocks..spec.n_blocks + spec.n_start] {
            cells[c] = Cell::Start;
        }
        for &c in &order[spec.n_blocks + spec.n_start..special] {
            cells[c] = Cell::Finish;
        }
        let finish_values = (0..spec.n_finish)
            .map(|_| rng.random_range(FINISH_LO..FINISH_HI))
            .collect();
        let layout = Layout {
            cells,
            finish_values,
            side: spec.side,
        };
        if layout.solvable() {
            return maze_from_layout(&layout, spec.deterministic);
        }
    }
    Err(EdgeDiffError::Generation(format!(
        "no solvable {}x{} maze with {} blocks after {} attempts",
        spec.side, spec.side, spec.n_blocks, MAZE_MAX_ATTEMPTS
    )))
}

/// Generate a maze dataset of `n_graphs` graphs.
///
/// Each graph uses its own generator seeded by `derive_seed(spec.seed, i)`,
/// so the result is independent of generation order.
pub fn gen_maze_dataset(spec: &MazeSpec, n_graphs: usize) -> Result<Vec<Graph>> {
    (0..n_graphs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, i as u64));
            gen_maze(spec, &mut rng)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Path-count augmentation
// ---------------------------------------------------------------------------

/// Append a walk-count edge channel to a graph.
///
/// Derives the binary adjacency A from the edge tensor, computes `A^power`,
/// and appends one channel whose `(i, j)` entry is the number of
/// length-`power` walks from `i` to `j` — kept on existing edges only
/// (entries with `A[i][j] = 0` stay zero).
pub fn augment_path_counts(g: &Graph, power: u32) -> Result<Graph> {
    let n = g.n();
    let adj = adjacency_mask(&g.e, DEFAULT_MASK_EPS)?;
    let mut ap = Array2::<f64>::eye(n);
    for _ in 0..power {
        ap = ap.dot(&adj.a);
    }
    let v = g.edge_channels();
    let mut e = Array3::zeros((n, n, v + 1));
    for i in 0..n {
        for j in 0..n {
            for k in 0..v {
                e[[i, j, k]] = g.e[[i, j, k]];
            }
            if adj.a[[i, j]] != 0.0 {
                e[[i, j, v]] = ap[[i, j]];
            }
        }
    }
    Graph::new(g.x.clone(), e)
}

// ---------------------------------------------------------------------------
// SBM and 2-D grid graphs
// ---------------------------------------------------------------------------

/// Sample a stochastic block model graph.
///
/// `sizes` gives the node count of each community; nodes are numbered by
/// community in order. Each unordered pair receives an edge independently
/// with probability `p_within` (same community) or `p_between` (different
/// communities). The result is undirected: a single binary edge channel,
/// symmetric, with an all-zero single node channel.
pub fn gen_sbm(
    sizes: &[usize],
    p_within: f64,
    p_between: f64,
    rng: &mut (impl Rng + ?Sized),
) -> Result<Graph> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(EdgeDiffError::invalid(
            "sbm community sizes must be non-empty and positive",
        ));
    }
    for p in [p_within, p_between] {
        if !(0.0..=1.0).contains(&p) {
            return Err(EdgeDiffError::invalid(
                "sbm edge probabilities must lie in [0, 1]",
            ));
        }
    }
    let n: usize = sizes.iter().sum();
    let mut community = Vec::with_capacity(n);
    for (c, &s) in sizes.iter().enumerate() {
        community.extend(std::iter::repeat_n(c, s));
    }
    let mut e = Array3::zeros((n, n, 1));
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if community[i] == community[j] {
                p_within
            } else {
                p_between
            };
            if rng.random::<f64>() < p {
                e[[i, j, 0]] = 1.0;
                e[[j, i, 0]] = 1.0;
            }
        }
    }
    Graph::new(Array2::zeros((n, 1)), e)
}

/// Build the standard 2-D grid graph with `rows * cols` nodes.
///
/// Node `(r, c)` has index `r * cols + c` and is connected to its right and
/// down neighbors; edges are undirected (symmetric single binary channel).
pub fn gen_grid2d(rows: usize, cols: usize) -> Result<Graph> {
    if rows == 0 || cols == 0 {
        return Err(EdgeDiffError::invalid("grid dimensions must be positive"));
    }
    let n = rows * cols;
    let mut e = Array3::zeros((n, n, 1));
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                e[[i, i + 1, 0]] = 1.0;
                e[[i + 1, i, 0]] = 1.0;
            }
            if r + 1 < rows {
                e[[i, i + cols, 0]] = 1.0;
                e[[i + cols, i, 0]] = 1.0;
            }
        }
    }
    Graph::new(Array2::zeros((n, 1)), e)
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Split a dataset into train and test subsets.
///
/// Membership is decided by a seeded shuffle of the indices; each subset
/// then preserves the original dataset order, so the same `(dataset, frac,
/// seed)` triple always produces the identical split and the union of the
/// two subsets is the original multiset.
pub fn split(dataset: &[Graph], train_frac: f64, seed: u64) -> Result<(Vec<Graph>, Vec<Graph>)> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(EdgeDiffError::invalid("train_frac must lie in [0, 1]"));
    }
    let n = dataset.len();
    let n_train = ((n as f64) * train_frac).round().min(n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (i, g) in dataset.iter().enumerate() {
        if in_train[i] {
            train.push(g.clone());
        } else {
            test.push(g.clone());
        }
    }
    Ok((train, test))
}
