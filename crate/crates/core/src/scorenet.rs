//! Permutation-equivariant score network over `(x, e)` graph tensors.
//!
//! Building blocks:
//!
//! - **GNM** (graph neural multiplication):
//!   `Ā·(x·W_X) + tanh(B[rep(Ā) ⊙ (e·W_E)])`, where `Ā` is the
//!   degree-normalized adjacency extracted from the current edge state,
//!   `rep` repeats `Ā` across channels, and `B` sums each node's
//!   incoming-edge features over the source axis.
//! - **ATTN**: per output edge channel, a head-group of scaled dot-product
//!   attention maps whose queries and keys are GNM outputs; the group is
//!   averaged into a single `n×n` channel.
//! - **GCN / GMH blocks**: `J` parallel GNM (resp. ATTN) activations,
//!   channel-concatenated and mixed by a two-layer ELU MLP. Both the node
//!   and edge update of layer `l` read the layer `l−1` pair.
//! - **Output heads**: the input state plus every layer state is
//!   concatenated into a two-layer MLP per component, and the result is
//!   divided by `std(t)` for time conditioning.
//!
//! Ablation flags: `gnm_edge_term=false` drops the tanh edge term from
//! every GNM; `joint_network=false` trains two disjoint parameter stores,
//! one producing only the node score and one only the edge score.
//!
//! Padded (masked-off) rows are re-zeroed after every block so that they
//! can never leak into real nodes through adjacency extraction.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{EdgeDiffError, Result};
use crate::graph::{adjacency_mask, degree_normalize, Graph};
use crate::sde::{marginal_params, Score, VpSdeConfig};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Architecture hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScoreNetConfig {
    /// Number of stacked GCN/GMH layers `L`.
    pub layers: usize,
    /// Parallel activations `J` per block.
    pub flows: usize,
    /// Attention heads per head-group.
    pub heads: usize,
    /// Node-state width and MLP hidden width.
    pub hidden_dim: usize,
    /// Input node channels `u`.
    pub node_in: usize,
    /// Input edge channels `v`.
    pub edge_in: usize,
    /// Edge-state channels of intermediate layers.
    pub hidden_channels: usize,
    /// Edge-state channels of the final layer.
    pub final_channels: usize,
    /// Adjacency extraction threshold.
    pub mask_eps: f64,
    /// Single shared network for both scores (`true`) or two disjoint ones.
    pub joint_network: bool,
    /// Keep the tanh edge-information term inside GNM.
    pub gnm_edge_term: bool,
}

impl ScoreNetConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("layers", self.layers),
            ("flows", self.flows),
            ("heads", self.heads),
            ("hidden_dim", self.hidden_dim),
            ("node_in", self.node_in),
            ("edge_in", self.edge_in),
            ("hidden_channels", self.hidden_channels),
            ("final_channels", self.final_channels),
        ] {
            if v == 0 {
                return Err(EdgeDiffError::invalid(format!("{name} must be >= 1")));
            }
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(EdgeDiffError::invalid(format!(
                "hidden_dim {} must be divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if !(self.mask_eps > 0.0) {
            return Err(EdgeDiffError::invalid("mask_eps must be positive"));
        }
        Ok(())
    }

    /// Edge-state channel count produced by layer `l` (1-based).
    fn edge_out(&self, l: usize) -> usize {
        if l == self.layers {
            self.final_channels
        } else {
            self.hidden_channels
        }
    }

    /// Channel counts of the `(x, e)` pair consumed by layer `l` (1-based).
    fn layer_inputs(&self, l: usize) -> (usize, usize) {
        if l == 1 {
            (self.node_in, self.edge_in)
        } else {
            (self.hidden_dim, self.edge_out(l - 1))
        }
    }
}

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

/// Named parameter tensors in deterministic (sorted) order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| EdgeDiffError::invalid(format!("missing parameter tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ArrayD<f64>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| EdgeDiffError::invalid(format!("missing parameter tensor {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn num_params(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn validate_finite(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            if !t.iter().all(|v| v.is_finite()) {
                return Err(EdgeDiffError::Numerical(format!(
                    "non-finite value in parameter tensor {name}"
                )));
            }
        }
        Ok(())
    }
}

/// A tensor slot of the network: name, shape, and fan-in for initialization
/// (`None` marks a zero-initialized bias).
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: Option<usize>,
}

fn spec(name: String, shape: &[usize], fan_in: Option<usize>) -> ParamSpec {
    ParamSpec {
        name,
        shape: shape.to_vec(),
        fan_in,
    }
}

/// Append the MLP tensor slots `{w1, b1, w2, b2}` for `in -> hidden -> out`.
fn mlp_specs(out: &mut Vec<ParamSpec>, prefix: &str, c_in: usize, hidden: usize, c_out: usize) {
    out.push(spec(format!("{prefix}.w1"), &[c_in, hidden], Some(c_in)));
    out.push(spec(format!("{prefix}.b1"), &[hidden], None));
    out.push(spec(format!("{prefix}.w2"), &[hidden, c_out], Some(hidden)));
    out.push(spec(format!("{prefix}.b2"), &[c_out], None));
}

/// Tensor slots of one full network (trunk plus the requested heads) under
/// `prefix`.
fn store_specs(cfg: &ScoreNetConfig, prefix: &str, head_x: bool, head_e: bool) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let h = cfg.hidden_dim;
    for l in 1..=cfg.layers {
        let (cx, ce) = cfg.layer_inputs(l);
        let k = cfg.edge_out(l);
        for j in 0..cfg.flows {
            let p = format!("{prefix}layer{l}.gnm{j}");
            out.push(spec(format!("{p}.wx"), &[cx, h], Some(cx)));
            out.push(spec(format!("{p}.we"), &[ce, h], Some(ce)));
        }
        mlp_specs(
            &mut out,
            &format!("{prefix}layer{l}.node_mlp"),
            cfg.flows * h,
            h,
            h,
        );
        for j in 0..cfg.flows {
            for c in 0..k {
                for qk in ["q", "k"] {
                    let p = format!("{prefix}layer{l}.attn{j}.ch{c}.{qk}");
                    out.push(spec(format!("{p}.wx"), &[cx, h], Some(cx)));
                    out.push(spec(format!("{p}.we"), &[ce, h], Some(ce)));
                }
            }
        }
        mlp_specs(
            &mut out,
            &format!("{prefix}layer{l}.edge_mlp"),
            cfg.flows * k,
            h,
            k,
        );
    }
    let node_cat = cfg.node_in + cfg.layers * h;
    let edge_cat = cfg.edge_in
        + (cfg.layers - 1) * cfg.hidden_channels
        + cfg.final_channels;
    if head_x {
        mlp_specs(&mut out, &format!("{prefix}head_x"), node_cat, h, cfg.node_in);
    }
    if head_e {
        mlp_specs(&mut out, &format!("{prefix}head_e"), edge_cat, h, cfg.edge_in);
    }
    out
}

/// All tensor slots of a network with the given config, in initialization
/// order.
pub fn param_specs(cfg: &ScoreNetConfig) -> Vec<ParamSpec> {
    if cfg.joint_network {
        store_specs(cfg, "joint.", true, true)
    } else {
        let mut out = store_specs(cfg, "node_net.", true, false);
        out.extend(store_specs(cfg, "edge_net.", false, true));
        out
    }
}

// ---------------------------------------------------------------------------
// The network
// ---------------------------------------------------------------------------

pub struct ScoreNet {
    pub config: ScoreNetConfig,
    pub sde: VpSdeConfig,
    pub params: ParamStore,
}

impl ScoreNet {
    /// Fresh network with weights `U(−1/sqrt(fan_in), 1/sqrt(fan_in))` and
    /// zero biases, drawn in deterministic spec order.
    pub fn new(
        config: ScoreNetConfig,
        sde: VpSdeConfig,
        rng: &mut (impl Rng + ?Sized),
    ) -> Result<Self> {
        config.validate()?;
        sde.validate()?;
        let mut params = ParamStore::new();
        for s in param_specs(&config) {
            let tensor = match s.fan_in {
                Some(f) => {
                    let bound = 1.0 / (f as f64).sqrt();
                    ArrayD::from_shape_simple_fn(IxDyn(&s.shape), || {
                        rng.random_range(-bound..bound)
                    })
                }
                None => ArrayD::zeros(IxDyn(&s.shape)),
            };
            params.insert(s.name, tensor);
        }
        Ok(ScoreNet {
            config,
            sde,
            params,
        })
    }

    /// Leaf every parameter tensor into `tape`, keyed by name.
    pub fn leaf_params(&self, tape: &mut Tape) -> BTreeMap<String, Var> {
        self.params
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone())))
            .collect()
    }

    fn check_input(&self, g: &Graph, t: f64, mask: &[bool]) -> Result<()> {
        if g.node_channels() != self.config.node_in || g.edge_channels() != self.config.edge_in {
            return Err(EdgeDiffError::shape(
                format!("({}, {})", self.config.node_in, self.config.edge_in),
                format!("({}, {})", g.node_channels(), g.edge_channels()),
                "score network input channels",
            ));
        }
        if mask.len() != g.n() {
            return Err(EdgeDiffError::invalid(format!(
                "mask length {} does not match node count {}",
                mask.len(),
                g.n()
            )));
        }
        if t < self.sde.t_eps || t > self.sde.t_end {
            return Err(EdgeDiffError::invalid(format!(
                "score evaluation time {t} outside [{}, {}]",
                self.sde.t_eps, self.sde.t_end
            )));
        }
        Ok(())
    }

    /// Build the forward pass on `tape`, returning `(s_x: n×u, s_e: n²×v)`.
    ///
    /// `vars` must come from [`ScoreNet::leaf_params`] on the same tape.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &BTreeMap<String, Var>,
        g: &Graph,
        t: f64,
        mask: &[bool],
    ) -> Result<(Var, Var)> {
        self.check_input(g, t, mask)?;
        let std = marginal_params(&self.sde, t)?.std;
        if std == 0.0 {
            return Err(EdgeDiffError::Numerical(
                "std(t) = 0; cannot condition the score output".into(),
            ));
        }

        let n = g.n();
        let mut g_in = g.clone();
        g_in.zero_masked(mask)?;
        let x0 = tape.leaf(g_in.x.clone().into_dyn());
        let e0 = tape.leaf(
            g_in.e
                .clone()
                .into_shape_with_order((n * n, self.config.edge_in))
                .expect("edge tensor flattens")
                .into_dyn(),
        );

        let full = mask.iter().all(|&b| b);
        let masker = Masker::new(mask, full);

        if self.config.joint_network {
            let (xs, es) = self.trunk(tape, vars, "joint.", x0, e0, n, &masker)?;
            let sx = self.head(tape, vars, "joint.head_x", &xs, &masker, MaskKind::Node, std)?;
            let se = self.head(tape, vars, "joint.head_e", &es, &masker, MaskKind::Edge, std)?;
            Ok((sx, se))
        } else {
            let (xs, _) = self.trunk(tape, vars, "node_net.", x0, e0, n, &masker)?;
            let sx = self.head(tape, vars, "node_net.head_x", &xs, &masker, MaskKind::Node, std)?;
            let (_, es) = self.trunk(tape, vars, "edge_net.", x0, e0, n, &masker)?;
            let se = self.head(tape, vars, "edge_net.head_e", &es, &masker, MaskKind::Edge, std)?;
            Ok((sx, se))
        }
    }

    /// Run all `L` layers, returning the node and edge state lists
    /// (input state first).
    fn trunk(
        &self,
        tape: &mut Tape,
        vars: &BTreeMap<String, Var>,
        prefix: &str,
        x0: Var,
        e0: Var,
        n: usize,
        masker: &Masker,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let cfg = &self.config;
        let mut xs = vec![x0];
        let mut es = vec![e0];
        for l in 1..=cfg.layers {
            let xv = *xs.last().expect("node state");
            let ev = *es.last().expect("edge state");
            let k = cfg.edge_out(l);
            let (_, ce) = cfg.layer_inputs(l);

            // Adjacency from this layer's own edge-state argument; constant
            // with respect to gradients (hard threshold).
            let e3 = tape
                .value(ev)
                .clone()
                .into_shape_with_order((n, n, ce))
                .expect("edge state reshapes to n×n×c");
            let abar = degree_normalize(&adjacency_mask(&e3, cfg.mask_eps)?);
            let gate = rep_gate(&abar, cfg.hidden_dim);

            // GCN node update from the previous pair.
            let mut hs = Vec::with_capacity(cfg.flows);
            for j in 0..cfg.flows {
                let wx = var(vars, &format!("{prefix}layer{l}.gnm{j}.wx"))?;
                let we = var(vars, &format!("{prefix}layer{l}.gnm{j}.we"))?;
                hs.push(self.gnm(tape, xv, ev, &abar, &gate, wx, we, n));
            }
            let cat = tape.concat_last(&hs);
            let xl = mlp2(tape, vars, &format!("{prefix}layer{l}.node_mlp"), cat)?;
            let xl = masker.apply(tape, xl, MaskKind::Node);

            // GMH edge update, also from the previous pair.
            let d = cfg.hidden_dim / cfg.heads;
            let mut flows = Vec::with_capacity(cfg.flows);
            for j in 0..cfg.flows {
                let mut channels = Vec::with_capacity(k);
                for c in 0..k {
                    let p = format!("{prefix}layer{l}.attn{j}.ch{c}");
                    let q = self.gnm(
                        tape,
                        xv,
                        ev,
                        &abar,
                        &gate,
                        var(vars, &format!("{p}.q.wx"))?,
                        var(vars, &format!("{p}.q.we"))?,
                        n,
                    );
                    let kk = self.gnm(
                        tape,
                        xv,
                        ev,
                        &abar,
                        &gate,
                        var(vars, &format!("{p}.k.wx"))?,
                        var(vars, &format!("{p}.k.we"))?,
                        n,
                    );
                    channels.push(attn_channel(tape, q, kk, cfg.heads, d, n));
                }
                flows.push(tape.concat_last(&channels));
            }
            let cat = tape.concat_last(&flows);
            let el = mlp2(tape, vars, &format!("{prefix}layer{l}.edge_mlp"), cat)?;
            let el = masker.apply(tape, el, MaskKind::Edge);

            xs.push(xl);
            es.push(el);
        }
        Ok((xs, es))
    }

    /// One GNM activation: `Ā·(x·W_X) [+ tanh(B[rep(Ā) ⊙ (e·W_E)])]`.
    #[allow(clippy::too_many_arguments)]
    fn gnm(
        &self,
        tape: &mut Tape,
        xv: Var,
        ev: Var,
        abar: &Array2<f64>,
        gate: &ArrayD<f64>,
        wx: Var,
        we: Var,
        n: usize,
    ) -> Var {
        let xw = tape.matmul(xv, wx);
        let linear = tape.matmul_const_left(abar, xw);
        if !self.config.gnm_edge_term {
            return linear;
        }
        let ew = tape.matmul(ev, we);
        let gated = tape.mul_const(ew, gate);
        let g3 = tape.reshape(gated, &[n, n, self.config.hidden_dim]);
        // B[·]: per target node, sum incoming-edge features over sources.
        let summed = tape.sum_axis(g3, 0);
        let th = tape.tanh(summed);
        tape.add(linear, th)
    }

    /// Output head: concat every state, apply the two-layer MLP, divide by
    /// `std(t)`, and re-mask.
    fn head(
        &self,
        tape: &mut Tape,
        vars: &BTreeMap<String, Var>,
        prefix: &str,
        states: &[Var],
        masker: &Masker,
        kind: MaskKind,
        std: f64,
    ) -> Result<Var> {
        let cat = tape.concat_last(states);
        let out = mlp2(tape, vars, prefix, cat)?;
        let out = tape.scale(out, 1.0 / std);
        Ok(masker.apply(tape, out, kind))
    }

    /// Inference-mode evaluation producing a [`Graph`] score.
    pub fn score_graph(&self, g: &Graph, t: f64, mask: &[bool]) -> Result<Graph> {
        let mut tape = Tape::inference();
        let vars = self.leaf_params(&mut tape);
        let (sx, se) = self.forward_on_tape(&mut tape, &vars, g, t, mask)?;
        let n = g.n();
        let x = tape
            .value(sx)
            .clone()
            .into_shape_with_order((n, self.config.node_in))
            .expect("node score shape");
        let e = tape
            .value(se)
            .clone()
            .into_shape_with_order((n, n, self.config.edge_in))
            .expect("edge score shape");
        Graph::new(x, e)
    }
}

impl Score for ScoreNet {
    fn score(&self, g: &Graph, t: f64, mask: &[bool]) -> Result<Graph> {
        self.score_graph(g, t, mask)
    }
}

// ---------------------------------------------------------------------------
// Internal helpers
// ---------------------------------------------------------------------------

fn var(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| EdgeDiffError::invalid(format!("missing parameter tensor {name}")))
}

/// `rep(Ā)` flattened to `n²×c`: row `i·n+j` holds `Ā[i][j]` in every channel.
fn rep_gate(abar: &Array2<f64>, channels: usize) -> ArrayD<f64> {
    let n = abar.nrows();
    let mut gate = ArrayD::zeros(IxDyn(&[n * n, channels]));
    for i in 0..n {
        for j in 0..n {
            let a = abar[[i, j]];
            if a != 0.0 {
                for c in 0..channels {
                    gate[[i * n + j, c]] = a;
                }
            }
        }
    }
    gate
}

/// Scaled dot-product attention for one output channel: per-head
/// `Q_h·K_hᵀ/sqrt(d)`, averaged over heads, flattened to `n²×1`.
fn attn_channel(tape: &mut Tape, q: Var, k: Var, heads: usize, d: usize, n: usize) -> Var {
    let mut acc: Option<Var> = None;
    for h in 0..heads {
        let qh = tape.slice_last(q, h * d, d);
        let kh = tape.slice_last(k, h * d, d);
        let kt = tape.transpose2(kh);
        let map = tape.matmul(qh, kt);
        acc = Some(match acc {
            Some(a) => tape.add(a, map),
            None => map,
        });
    }
    let sum = acc.expect("heads >= 1");
    let avg = tape.scale(sum, 1.0 / (heads as f64 * (d as f64).sqrt()));
    tape.reshape(avg, &[n * n, 1])
}

/// Two-layer ELU MLP from the `{w1, b1, w2, b2}` slots under `prefix`.
fn mlp2(tape: &mut Tape, vars: &BTreeMap<String, Var>, prefix: &str, input: Var) -> Result<Var> {
    let h = tape.matmul(input, var(vars, &format!("{prefix}.w1"))?);
    let h = tape.add_bias(h, var(vars, &format!("{prefix}.b1"))?);
    let h = tape.elu(h);
    let h = tape.matmul(h, var(vars, &format!("{prefix}.w2"))?);
    Ok(tape.add_bias(h, var(vars, &format!("{prefix}.b2"))?))
}

#[derive(Clone, Copy)]
enum MaskKind {
    Node,
    Edge,
}

/// Zero/one row masks for node (`n×1`) and edge (`n²×1`) states; a no-op
/// when every node is real.
struct Masker {
    node: Option<ArrayD<f64>>,
    edge: Option<ArrayD<f64>>,
}

impl Masker {
    fn new(mask: &[bool], full: bool) -> Self {
        if full {
            return Masker {
                node: None,
                edge: None,
            };
        }
        let n = mask.len();
        let mut node = ArrayD::zeros(IxDyn(&[n, 1]));
        for (i, &m) in mask.iter().enumerate() {
            node[[i, 0]] = if m { 1.0 } else { 0.0 };
        }
        let mut edge = ArrayD::zeros(IxDyn(&[n * n, 1]));
        for i in 0..n {
            for j in 0..n {
                edge[[i * n + j, 0]] = if mask[i] && mask[j] { 1.0 } else { 0.0 };
            }
        }
        Masker {
            node: Some(node),
            edge: Some(edge),
        }
    }

    fn apply(&self, tape: &mut Tape, state: Var, kind: MaskKind) -> Var {
        let m = match kind {
            MaskKind::Node => &self.node,
            MaskKind::Edge => &self.edge,
        };
        match m {
            None => state,
            Some(m) => {
                let c = tape.value(state).shape()[1];
                let wide = m
                    .broadcast(IxDyn(&[m.shape()[0], c]))
                    .expect("mask broadcasts over channels")
                    .to_owned();
                tape.mul_const(state, &wide)
            }
        }
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ScoreNetConfig {
        ScoreNetConfig {
            layers: 2,
            flows: 2,
            heads: 2,
            hidden_dim: 8,
            node_in: 2,
            edge_in: 3,
            hidden_channels: 3,
            final_channels: 2,
            mask_eps: 0.01,
            joint_network: true,
            gnm_edge_term: true,
        }
    }

    fn net(cfg: ScoreNetConfig, seed: u64) -> ScoreNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScoreNet::new(cfg, VpSdeConfig::default(), &mut rng).unwrap()
    }

    fn rand_graph(n: usize, u: usize, v: usize, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Graph::standard_normal(n, u, v, &mut rng)
    }

    fn rel_dev(a: &Graph, b: &Graph) -> f64 {
        let mut worst = 0.0f64;
        for (x, y) in a.x.iter().zip(b.x.iter()).chain(a.e.iter().zip(b.e.iter())) {
            let denom = x.abs().max(y.abs()).max(1e-8);
            worst = worst.max((x - y).abs() / denom);
        }
        worst
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config();
        cfg.heads = 3; // does not divide hidden_dim = 8
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.layers = 0;
        assert!(cfg.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn zero_parameters_give_zero_score() {
        let mut net = net(tiny_config(), 1);
        let names: Vec<String> = net.params.names().cloned().collect();
        for name in names {
            let t = net.params.get_mut(&name).unwrap();
            t.fill(0.0);
        }
        let g = rand_graph(4, 2, 3, 2);
        let s = net.score_graph(&g, 0.5, &[true; 4]).unwrap();
        assert!(s.x.iter().all(|v| *v == 0.0));
        assert!(s.e.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gnm_single_edge_worked_example() {
        // 2 nodes, edge 0→1 with unit feature, W_X = 0, W_E = identity:
        // row 1 (incoming sum) = tanh(1), row 0 = 0.
        let cfg = ScoreNetConfig {
            layers: 1,
            flows: 1,
            heads: 1,
            hidden_dim: 1,
            node_in: 1,
            edge_in: 1,
            hidden_channels: 1,
            final_channels: 1,
            mask_eps: 0.01,
            joint_network: true,
            gnm_edge_term: true,
        };
        let net = net(cfg.clone(), 3);
        let mut e = Array3::zeros((2, 2, 1));
        e[[0, 1, 0]] = 1.0;
        let abar = degree_normalize(&adjacency_mask(&e, cfg.mask_eps).unwrap());
        assert_eq!(abar[[0, 1]], 1.0);

        let mut tape = Tape::new();
        let xv = tape.leaf(ArrayD::zeros(IxDyn(&[2, 1])));
        let ev = tape.leaf(
            e.clone()
                .into_shape_with_order((4, 1))
                .unwrap()
                .into_dyn(),
        );
        let wx = tape.leaf(ArrayD::zeros(IxDyn(&[1, 1])));
        let we = tape.leaf(ArrayD::from_elem(IxDyn(&[1, 1]), 1.0));
        let gate = rep_gate(&abar, 1);
        let out = net.gnm(&mut tape, xv, ev, &abar, &gate, wx, we, 2);
        let v = tape.value(out);
        assert!((v[[0, 0]] - 0.0).abs() < 1e-15);
        assert!((v[[1, 0]] - 1.0f64.tanh()).abs() < 1e-12);
    }

    #[test]
    fn gnm_empty_adjacency_gives_zero() {
        let cfg = tiny_config();
        let net = net(cfg.clone(), 4);
        // all edge magnitudes below mask_eps ⇒ Ā = 0 ⇒ both terms vanish
        let e = Array3::from_elem((3, 3, 3), 0.005);
        let abar = degree_normalize(&adjacency_mask(&e, cfg.mask_eps).unwrap());
        let mut tape = Tape::new();
        let xv = tape.leaf(rand_graph(3, 2, 3, 5).x.into_dyn());
        let ev = tape.leaf(e.into_shape_with_order((9, 3)).unwrap().into_dyn());
        let wx = tape.leaf(net.params.get("joint.layer1.gnm0.wx").unwrap().clone());
        let we = tape.leaf(net.params.get("joint.layer1.gnm0.we").unwrap().clone());
        let gate = rep_gate(&abar, cfg.hidden_dim);
        let out = net.gnm(&mut tape, xv, ev, &abar, &gate, wx, we, 3);
        assert!(tape.value(out).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gnm_without_edge_term_is_pure_linear_part() {
        let mut cfg = tiny_config();
        cfg.gnm_edge_term = false;
        let net = net(cfg.clone(), 6);
        let g = rand_graph(4, 2, 3, 7);
        let abar = degree_normalize(&adjacency_mask(&g.e, cfg.mask_eps).unwrap());
        let mut tape = Tape::new();
        let xv = tape.leaf(g.x.clone().into_dyn());
        let ev = tape.leaf(g.e.clone().into_shape_with_order((16, 3)).unwrap().into_dyn());
        let wx_t = net.params.get("joint.layer1.gnm0.wx").unwrap().clone();
        let wx = tape.leaf(wx_t.clone());
        let we = tape.leaf(net.params.get("joint.layer1.gnm0.we").unwrap().clone());
        let gate = rep_gate(&abar, cfg.hidden_dim);
        let out = net.gnm(&mut tape, xv, ev, &abar, &gate, wx, we, 4);
        let wx2 = wx_t.into_shape_with_order((2, 8)).unwrap();
        let want = abar.dot(&g.x.dot(&wx2));
        for (a, b) in tape.value(out).iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attn_single_node_matches_hand_value() {
        // n=1: output = (Σ_h q_h·k_h) / (heads·sqrt(d))
        let mut tape = Tape::new();
        let q = tape.leaf(arr2(&[[1.0, 2.0, 3.0, 4.0]]).into_dyn());
        let k = tape.leaf(arr2(&[[0.5, -1.0, 2.0, 0.25]]).into_dyn());
        // heads=2, d=2: head 0 = 1·0.5 + 2·(−1) = −1.5; head 1 = 3·2 + 4·0.25 = 7
        let out = attn_channel(&mut tape, q, k, 2, 2, 1);
        let want = (-1.5 + 7.0) / (2.0 * 2.0f64.sqrt());
        assert!((tape.value(out)[[0, 0]] - want).abs() < 1e-12);
    }

    #[test]
    fn attn_zero_q_weights_give_zero() {
        let mut tape = Tape::new();
        let q = tape.leaf(ArrayD::zeros(IxDyn(&[3, 4])));
        let k = tape.leaf(rand_graph(3, 4, 1, 8).x.into_dyn());
        let out = attn_channel(&mut tape, q, k, 2, 2, 3);
        assert!(tape.value(out).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_shapes_across_configs() {
        for (layers, flows, heads, hidden, hc, fc, u, v, n) in [
            (1, 1, 1, 4, 2, 2, 1, 1, 1),
            (2, 2, 2, 8, 3, 2, 2, 3, 5),
            (3, 1, 4, 8, 2, 4, 3, 4, 4),
        ] {
            for joint in [true, false] {
                let cfg = ScoreNetConfig {
                    layers,
                    flows,
                    heads,
                    hidden_dim: hidden,
                    node_in: u,
                    edge_in: v,
                    hidden_channels: hc,
                    final_channels: fc,
                    mask_eps: 0.01,
                    joint_network: joint,
                    gnm_edge_term: true,
                };
                let net = net(cfg, 9);
                let g = rand_graph(n, u, v, 10);
                let s = net.score_graph(&g, 0.5, &vec![true; n]).unwrap();
                assert_eq!(s.x.dim(), (n, u));
                assert_eq!(s.e.dim(), (n, n, v));
            }
        }
    }

    #[test]
    fn forward_deterministic() {
        let net = net(tiny_config(), 11);
        let g = rand_graph(5, 2, 3, 12);
        let a = net.score_graph(&g, 0.4, &[true; 5]).unwrap();
        let b = net.score_graph(&g, 0.4, &[true; 5]).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.e, b.e);
    }

    #[test]
    fn equivariance_under_node_permutation() {
        // Quantified contract: 50 random graphs (n ≤ 8), 20 permutations
        // each, relative deviation ≤ 1e−5.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for joint in [true, false] {
            for edge_term in [true, false] {
                let mut cfg = tiny_config();
                cfg.joint_network = joint;
                cfg.gnm_edge_term = edge_term;
                let net = net(cfg, 14);
                // share the 50/20 budget across the four ablation modes
                for gi in 0..13 {
                    let n = 2 + (gi % 7);
                    let g = Graph::standard_normal(n, 2, 3, &mut rng);
                    let out = net.score_graph(&g, 0.6, &vec![true; n]).unwrap();
                    for _ in 0..5 {
                        let mut perm: Vec<usize> = (0..n).collect();
                        for i in (1..n).rev() {
                            let j = rng.random_range(0..=i);
                            perm.swap(i, j);
                        }
                        let pg = g.permute(&perm).unwrap();
                        let pout = net.score_graph(&pg, 0.6, &vec![true; n]).unwrap();
                        let want = out.permute(&perm).unwrap();
                        let dev = rel_dev(&pout, &want);
                        assert!(dev <= 1e-5, "equivariance violated: {dev}");
                    }
                }
            }
        }
    }

    #[test]
    fn time_conditioning_divides_by_std() {
        let net = net(tiny_config(), 15);
        let g = rand_graph(4, 2, 3, 16);
        let m = [true; 4];
        let s1 = net.score_graph(&g, 0.3, &m).unwrap();
        let s2 = net.score_graph(&g, 0.8, &m).unwrap();
        let std1 = marginal_params(&net.sde, 0.3).unwrap().std;
        let std2 = marginal_params(&net.sde, 0.8).unwrap().std;
        // raw output is t-independent, so s(t1)·std1 = s(t2)·std2
        for (a, b) in s1.x.iter().zip(s2.x.iter()) {
            assert!((a * std1 - b * std2).abs() < 1e-10);
        }
    }

    #[test]
    fn padded_rows_do_not_affect_real_nodes() {
        let net = net(tiny_config(), 17);
        let g = rand_graph(3, 2, 3, 18);
        let plain = net.score_graph(&g, 0.5, &[true; 3]).unwrap();

        // embed in a 5-node graph with junk in the padded slots
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut big = Graph::standard_normal(5, 2, 3, &mut rng);
        for i in 0..3 {
            for c in 0..2 {
                big.x[[i, c]] = g.x[[i, c]];
            }
            for j in 0..3 {
                for c in 0..3 {
                    big.e[[i, j, c]] = g.e[[i, j, c]];
                }
            }
        }
        let mask = [true, true, true, false, false];
        let padded = net.score_graph(&big, 0.5, &mask).unwrap();
        for i in 0..3 {
            for c in 0..2 {
                assert!((padded.x[[i, c]] - plain.x[[i, c]]).abs() < 1e-12);
            }
            for j in 0..3 {
                for c in 0..3 {
                    assert!((padded.e[[i, j, c]] - plain.e[[i, j, c]]).abs() < 1e-12);
                }
            }
        }
        // padded slots come out exactly zero
        for c in 0..2 {
            assert_eq!(padded.x[[4, c]], 0.0);
        }
        assert_eq!(padded.e[[4, 1, 0]], 0.0);
        assert_eq!(padded.e[[1, 4, 0]], 0.0);
    }

    #[test]
    fn separate_networks_are_disjoint() {
        let mut cfg = tiny_config();
        cfg.joint_network = false;
        let mut net = net(cfg, 20);
        let g = rand_graph(4, 2, 3, 21);
        let m = [true; 4];
        let before = net.score_graph(&g, 0.5, &m).unwrap();
        // perturb every edge_net tensor; s_x must not move
        let names: Vec<String> = net
            .params
            .names()
            .filter(|n| n.starts_with("edge_net."))
            .cloned()
            .collect();
        assert!(!names.is_empty());
        for name in names {
            let t = net.params.get_mut(&name).unwrap();
            *t += 0.37;
        }
        let after = net.score_graph(&g, 0.5, &m).unwrap();
        assert_eq!(before.x, after.x);
        assert_ne!(before.e, after.e);
    }

    #[test]
    fn bounded_inputs_stay_finite() {
        let net = net(tiny_config(), 22);
        let mut g = rand_graph(5, 2, 3, 23);
        g.x.mapv_inplace(|v| v * 1e3);
        g.e.mapv_inplace(|v| v * 1e3);
        let s = net.score_graph(&g, 0.5, &[true; 5]).unwrap();
        assert!(s.x.iter().all(|v| v.is_finite()));
        assert!(s.e.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = net(tiny_config(), 24);
        let g = rand_graph(4, 2, 3, 25);
        assert!(net.score_graph(&g, 0.5, &[true; 3]).is_err());
        assert!(net.score_graph(&g, 1e-5, &[true; 4]).is_err());
        let wrong = rand_graph(4, 1, 3, 26);
        assert!(net.score_graph(&wrong, 0.5, &[true; 4]).is_err());
    }

    #[test]
    fn degree_normalized_adjacency_is_used() {
        // sanity: a dense block raises degrees and shrinks Ā entries
        let mut e = Array3::zeros((3, 3, 1));
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    e[[i, j, 0]] = 1.0;
                }
            }
        }
        let adj = adjacency_mask(&e, 0.01).unwrap();
        let abar = degree_normalize(&adj);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((abar[[i, j]] - 0.25).abs() < 1e-15);
                }
            }
        }
    }
}
