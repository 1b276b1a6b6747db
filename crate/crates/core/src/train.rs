//! Training loop for the score network.
//!
//! Minimizes the denoising score-matching loss with adaptive-moment
//! gradient descent (β₁ = 0.9, β₂ = 0.999, ε = 1e−8) and decoupled weight
//! decay, tracks an exponential moving average (EMA) of the parameters
//! after every step, and logs node/edge losses on the train and test
//! splits each epoch.
//!
//! Determinism: every epoch draws its shuffle and batch randomness from a
//! seed derived from `(config seed, epoch index)`, and the test-split loss
//! is evaluated with the same derived seed every epoch so that the logged
//! curve is comparable across epochs. Identical seed, config, and dataset
//! reproduce the loss log bitwise — including runs that are interrupted
//! and resumed from a checkpoint via [`Trainer`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::ckpt::OptState;
use crate::data::derive_seed;
use crate::error::{EdgeDiffError, Result};
use crate::graph::{Graph, GraphBatch};
use crate::scorenet::{ParamStore, ScoreNet};
use crate::sde::{dsm_loss, kernel_score, marginal_params, perturb};

// ---------------------------------------------------------------------------
// Configuration and log
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            weight_decay: 1e-4,
            ema_decay: 0.999,
            batch_size: 256,
            epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(EdgeDiffError::invalid("learning_rate must be positive"));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(EdgeDiffError::invalid("ema_decay must be in (0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(EdgeDiffError::invalid("weight_decay must be >= 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(EdgeDiffError::invalid(
                "batch_size and epochs must be >= 1",
            ));
        }
        Ok(())
    }
}

/// One epoch of the training log.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_x_train: f64,
    pub loss_e_train: f64,
    pub loss_x_test: f64,
    pub loss_e_test: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,loss_x_train,loss_e_train,loss_x_test,loss_e_test,seconds\n",
        );
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.loss_x_train, r.loss_e_train, r.loss_x_test, r.loss_e_test, r.seconds
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adaptive-moment estimation with decoupled weight decay.
///
/// The decay multiplies the parameter by `1 − lr·wd` before the gradient
/// move, so a zero gradient shrinks every parameter by exactly that factor.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub wd: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    pub m: BTreeMap<String, ArrayD<f64>>,
    pub v: BTreeMap<String, ArrayD<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, wd: f64) -> Self {
        AdamW {
            lr,
            wd,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Apply one update; parameters without a gradient entry are treated as
    /// having zero gradient (they still decay).
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, ArrayD<f64>>,
    ) -> Result<()> {
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        let decay = 1.0 - self.lr * self.wd;
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let p = params.get_mut(&name)?;
            let zero = ArrayD::zeros(p.raw_dim());
            let g = grads.get(&name).unwrap_or(&zero);
            if g.shape() != p.shape() {
                return Err(EdgeDiffError::shape(
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                    &format!("gradient for {name}"),
                ));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(p.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(p.raw_dim()));
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    *p = *p * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
        Ok(())
    }
}

/// `ema ← decay·ema + (1−decay)·params`, tensor-wise.
pub fn ema_update(ema: &mut ParamStore, params: &ParamStore, decay: f64) -> Result<()> {
    for (name, p) in params.iter() {
        let e = ema.get_mut(name)?;
        ndarray::Zip::from(e).and(p).for_each(|e, &p| {
            *e = decay * *e + (1.0 - decay) * p;
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Taped loss
// ---------------------------------------------------------------------------

/// Build one graph's DSM loss on `tape` at fixed `(t, noise)`.
///
/// Returns the scalar loss variable plus the node and edge loss values;
/// numerically identical to [`crate::sde::dsm_loss_at`] with the same
/// arguments.
pub fn graph_loss_on_tape(
    net: &ScoreNet,
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    g0: &Graph,
    mask: &[bool],
    t: f64,
    noise: &Graph,
) -> Result<(Var, f64, f64)> {
    let mp = marginal_params(&net.sde, t)?;
    let g_t = perturb(&net.sde, g0, t, noise)?;
    let target = kernel_score(&net.sde, &g_t, g0, t)?;
    let (sx, se) = net.forward_on_tape(tape, vars, &g_t, t, mask)?;

    let n = g0.n();
    let (u, v) = (g0.node_channels(), g0.edge_channels());
    let w = mp.std * mp.std;
    let mut wx = ArrayD::zeros(ndarray::IxDyn(&[n, u]));
    for i in 0..n {
        if mask[i] {
            for c in 0..u {
                wx[[i, c]] = w;
            }
        }
    }
    let mut we = ArrayD::zeros(ndarray::IxDyn(&[n * n, v]));
    for i in 0..n {
        for j in 0..n {
            if mask[i] && mask[j] {
                for c in 0..v {
                    we[[i * n + j, c]] = w;
                }
            }
        }
    }
    let tx = target.x.into_dyn();
    let te = target
        .e
        .into_shape_with_order((n * n, v))
        .expect("target edge reshapes")
        .into_dyn();

    let dx = tape.sub_const(sx, &tx);
    let dx2 = tape.mul(dx, dx);
    let dxw = tape.mul_const(dx2, &wx);
    let lx = tape.sum_all(dxw);

    let de = tape.sub_const(se, &te);
    let de2 = tape.mul(de, de);
    let dew = tape.mul_const(de2, &we);
    let le = tape.sum_all(dew);

    let total = tape.add(lx, le);
    let lx_val = *tape.value(lx).first().expect("scalar");
    let le_val = *tape.value(le).first().expect("scalar");
    Ok((total, lx_val, le_val))
}

/// Per-graph time/noise draws for one minibatch, taken from `rng` in batch
/// order.
fn draw_batch(
    batch: &GraphBatch,
    sde: &crate::sde::VpSdeConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, Graph)> {
    batch
        .graphs
        .iter()
        .map(|g| {
            let t = rng.random_range(sde.t_eps..sde.t_end);
            let noise =
                Graph::standard_normal(g.n(), g.node_channels(), g.edge_channels(), rng);
            (t, noise)
        })
        .collect()
}

/// Accumulate averaged gradients and summed loss values over a minibatch.
fn batch_grads(
    net: &ScoreNet,
    batch: &GraphBatch,
    draws: &[(f64, Graph)],
) -> Result<(BTreeMap<String, ArrayD<f64>>, f64, f64)> {
    let m = batch.len() as f64;
    let mut grads: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
    let (mut sum_x, mut sum_e) = (0.0, 0.0);
    for (idx, (g0, mask)) in batch.graphs.iter().zip(&batch.masks).enumerate() {
        let (t, noise) = &draws[idx];
        let mut tape = Tape::new();
        let vars = net.leaf_params(&mut tape);
        let (total, lx, le) = graph_loss_on_tape(net, &mut tape, &vars, g0, mask, *t, noise)?;
        sum_x += lx;
        sum_e += le;
        let scaled = tape.scale(total, 1.0 / m);
        let all = tape.backward(scaled);
        for (name, var) in &vars {
            let g = tape.grad_of(&all, *var);
            match grads.get_mut(name) {
                Some(acc) => *acc += &g,
                None => {
                    grads.insert(name.clone(), g);
                }
            }
        }
    }
    Ok((grads, sum_x, sum_e))
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Resumable training driver.
///
/// Owns the optimizer state, the EMA tracker, and the epoch counter, and
/// advances one epoch per [`Trainer::run_epoch`] call. Each epoch seeds
/// its shuffle and batch draws from `derive_seed(cfg.seed, epoch)`, so a
/// run that is checkpointed after epoch `k` and resumed reproduces the
/// uninterrupted run bitwise.
pub struct Trainer {
    cfg: TrainConfig,
    opt: AdamW,
    ema: ParamStore,
    next_epoch: usize,
}

impl Trainer {
    /// Start a fresh run; the EMA is initialized to the current parameters.
    pub fn new(cfg: &TrainConfig, net: &ScoreNet) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            cfg: *cfg,
            opt: AdamW::new(cfg.learning_rate, cfg.weight_decay),
            ema: net.params.clone(),
            next_epoch: 1,
        })
    }

    /// Rebuild a trainer from checkpointed state after `completed` epochs.
    ///
    /// The caller restores the raw parameters into the network separately;
    /// this restores the EMA and the optimizer moments.
    pub fn resume(
        cfg: &TrainConfig,
        ema: ParamStore,
        opt: OptState,
        completed: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut adam = AdamW::new(cfg.learning_rate, cfg.weight_decay);
        adam.step_count = opt.step_count;
        for (name, t) in opt.m.iter() {
            adam.m.insert(name.clone(), t.clone());
        }
        for (name, t) in opt.v.iter() {
            adam.v.insert(name.clone(), t.clone());
        }
        Ok(Trainer {
            cfg: *cfg,
            opt: adam,
            ema,
            next_epoch: completed + 1,
        })
    }

    /// Number of completed epochs.
    pub fn completed_epochs(&self) -> usize {
        self.next_epoch - 1
    }

    /// Current EMA parameters.
    pub fn ema(&self) -> &ParamStore {
        &self.ema
    }

    /// Consume the trainer, yielding the EMA parameters.
    pub fn into_ema(self) -> ParamStore {
        self.ema
    }

    /// Snapshot the optimizer state for checkpointing.
    pub fn opt_state(&self) -> OptState {
        let to_store = |map: &BTreeMap<String, ArrayD<f64>>| {
            let mut s = ParamStore::new();
            for (name, t) in map {
                s.insert(name.clone(), t.clone());
            }
            s
        };
        OptState {
            m: to_store(&self.opt.m),
            v: to_store(&self.opt.v),
            step_count: self.opt.step_count,
        }
    }

    /// Run one epoch of minibatch updates over `train_set`.
    ///
    /// The test batch, when given, is evaluated with the same fixed
    /// derived seed every epoch so the logged column is comparable.
    pub fn run_epoch(
        &mut self,
        net: &mut ScoreNet,
        train_set: &[Graph],
        test_batch: Option<&GraphBatch>,
    ) -> Result<EpochRecord> {
        if train_set.is_empty() {
            return Err(EdgeDiffError::invalid("training set is empty"));
        }
        let epoch = self.next_epoch;
        let cfg = &self.cfg;
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));

        let mut order: Vec<usize> = (0..train_set.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let (mut sum_x, mut sum_e) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let graphs: Vec<Graph> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let batch = GraphBatch::from_graphs(&graphs)?;
            let draws = draw_batch(&batch, &net.sde, &mut rng);
            let (grads, lx, le) = batch_grads(net, &batch, &draws)?;
            if !(lx.is_finite() && le.is_finite()) {
                return Err(EdgeDiffError::Numerical(format!(
                    "non-finite loss at epoch {epoch} (lr {})",
                    cfg.learning_rate
                )));
            }
            sum_x += lx;
            sum_e += le;
            self.opt.step(&mut net.params, &grads)?;
            ema_update(&mut self.ema, &net.params, cfg.ema_decay)?;
        }
        let m = train_set.len() as f64;
        let (loss_x_train, loss_e_train) = (sum_x / m, sum_e / m);

        let (loss_x_test, loss_e_test) = match test_batch {
            None => (0.0, 0.0),
            Some(batch) => {
                let eval_seed = cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
                let mut eval_rng = ChaCha8Rng::seed_from_u64(eval_seed);
                dsm_loss(&*net, &net.sde, batch, &mut eval_rng)?
            }
        };
        if !(loss_x_test.is_finite() && loss_e_test.is_finite()) {
            return Err(EdgeDiffError::Numerical(format!(
                "non-finite test loss at epoch {epoch} (lr {})",
                cfg.learning_rate
            )));
        }

        self.next_epoch += 1;
        Ok(EpochRecord {
            epoch,
            loss_x_train,
            loss_e_train,
            loss_x_test,
            loss_e_test,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Train `net` in place; returns the EMA parameter store and the loss log.
///
/// One-shot wrapper around [`Trainer`]. The test split is evaluated once
/// per epoch with a fixed derived seed; an empty test split logs zero test
/// losses.
pub fn train(
    net: &mut ScoreNet,
    train_set: &[Graph],
    test_set: &[Graph],
    cfg: &TrainConfig,
) -> Result<(ParamStore, TrainLog)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(EdgeDiffError::invalid("training set is empty"));
    }
    let test_batch = if test_set.is_empty() {
        None
    } else {
        Some(GraphBatch::from_graphs(test_set)?)
    };
    let mut trainer = Trainer::new(cfg, net)?;
    let mut log = TrainLog::default();
    for _ in 0..cfg.epochs {
        log.records
            .push(trainer.run_epoch(net, train_set, test_batch.as_ref())?);
    }
    Ok((trainer.into_ema(), log))
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub checked: usize,
}

/// Compare reverse-mode gradients of the single-graph DSM loss against
/// central finite differences with step `h` over every parameter scalar.
pub fn grad_check(
    net: &ScoreNet,
    g0: &Graph,
    mask: &[bool],
    t: f64,
    noise: &Graph,
    h: f64,
) -> Result<GradCheckReport> {
    // analytic gradients
    let mut tape = Tape::new();
    let vars = net.leaf_params(&mut tape);
    let (total, _, _) = graph_loss_on_tape(net, &mut tape, &vars, g0, mask, t, noise)?;
    let all = tape.backward(total);
    let analytic: BTreeMap<String, ArrayD<f64>> = vars
        .iter()
        .map(|(name, var)| (name.clone(), tape.grad_of(&all, *var)))
        .collect();

    // finite-difference probe of every scalar
    let loss_with = |probe: &ScoreNet| -> Result<f64> {
        let (lx, le) = crate::sde::dsm_loss_at(probe, &probe.sde, g0, mask, t, noise)?;
        Ok(lx + le)
    };
    let mut probe = ScoreNet {
        config: net.config.clone(),
        sde: net.sde,
        params: net.params.clone(),
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
    };
    let names: Vec<String> = net.params.names().cloned().collect();
    for name in &names {
        let len = net.params.get(name)?.len();
        for idx in 0..len {
            let orig = net.params.get(name)?.as_slice().expect("contiguous")[idx];
            probe.params.get_mut(name)?.as_slice_mut().unwrap()[idx] = orig + h;
            let plus = loss_with(&probe)?;
            probe.params.get_mut(name)?.as_slice_mut().unwrap()[idx] = orig - h;
            let minus = loss_with(&probe)?;
            probe.params.get_mut(name)?.as_slice_mut().unwrap()[idx] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let an = analytic[name].as_slice().unwrap()[idx];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-4);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = format!("{name}[{idx}]");
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorenet::ScoreNetConfig;
    use crate::sde::{dsm_loss_at, VpSdeConfig};
    use ndarray::IxDyn;

    fn tiny_net(seed: u64, joint: bool) -> ScoreNet {
        let cfg = ScoreNetConfig {
            layers: 2,
            flows: 1,
            heads: 2,
            hidden_dim: 4,
            node_in: 2,
            edge_in: 2,
            hidden_channels: 2,
            final_channels: 2,
            mask_eps: 0.01,
            joint_network: joint,
            gnm_edge_term: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScoreNet::new(cfg, VpSdeConfig::default(), &mut rng).unwrap()
    }

    fn scalar_net(seed: u64) -> ScoreNet {
        let cfg = ScoreNetConfig {
            layers: 1,
            flows: 1,
            heads: 1,
            hidden_dim: 4,
            node_in: 1,
            edge_in: 1,
            hidden_channels: 1,
            final_channels: 1,
            mask_eps: 0.01,
            joint_network: true,
            gnm_edge_term: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScoreNet::new(cfg, VpSdeConfig::default(), &mut rng).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.ema_decay = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let net = tiny_net(1, true);
        let mut params = net.params.clone();
        let before = params.clone();
        let mut opt = AdamW::new(0.0, 1e-4);
        let mut grads = BTreeMap::new();
        for (name, p) in params.iter() {
            grads.insert(name.clone(), ArrayD::from_elem(p.raw_dim(), 0.5));
        }
        for _ in 0..5 {
            opt.step(&mut params, &grads).unwrap();
        }
        for (name, p) in params.iter() {
            assert_eq!(p, before.get(name).unwrap(), "{name} moved");
        }
    }

    #[test]
    fn zero_gradient_is_pure_weight_decay() {
        let net = tiny_net(2, true);
        let mut params = net.params.clone();
        let before = params.clone();
        let (lr, wd) = (0.01, 1e-4);
        let mut opt = AdamW::new(lr, wd);
        opt.step(&mut params, &BTreeMap::new()).unwrap();
        let factor = 1.0 - lr * wd;
        for (name, p) in params.iter() {
            let b = before.get(name).unwrap();
            for (x, y) in p.iter().zip(b.iter()) {
                assert_eq!(*x, *y * factor, "{name}");
            }
        }
    }

    #[test]
    fn adam_matches_hand_computed_steps() {
        // one scalar parameter p = 1, constant gradient g = 0.5, wd = 0
        let mut params = ParamStore::new();
        params.insert("p", ArrayD::from_elem(IxDyn(&[1]), 1.0));
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), ArrayD::from_elem(IxDyn(&[1]), 0.5));
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut params, &grads).unwrap();
        // m̂ = g, v̂ = g² ⇒ step = lr·g/(|g|+ε) ≈ lr
        let p1 = params.get("p").unwrap()[[0]];
        let want1 = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p1 - want1).abs() < 1e-12);
        opt.step(&mut params, &grads).unwrap();
        // constant gradient keeps m̂ = g and v̂ = g² after bias correction
        let p2 = params.get("p").unwrap()[[0]];
        let want2 = want1 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p2 - want2).abs() < 1e-12);
    }

    #[test]
    fn ema_single_step_matches_definition() {
        let net = tiny_net(3, true);
        let p0 = net.params.clone();
        let mut params = net.params.clone();
        for (_, t) in params.iter_mut() {
            *t += 0.1;
        }
        let mut ema = p0.clone();
        ema_update(&mut ema, &params, 0.999).unwrap();
        for (name, e) in ema.iter() {
            let a = p0.get(name).unwrap();
            let b = params.get(name).unwrap();
            for ((x, y), z) in e.iter().zip(a.iter()).zip(b.iter()) {
                assert!((x - (0.999 * y + 0.001 * z)).abs() < 1e-15, "{name}");
            }
        }
    }

    #[test]
    fn ema_converges_to_frozen_parameters() {
        let net = tiny_net(4, true);
        let params = net.params.clone();
        let mut ema = params.clone();
        for (_, t) in ema.iter_mut() {
            *t += 1.0;
        }
        let dist = |a: &ParamStore, b: &ParamStore| -> f64 {
            a.iter()
                .map(|(n, t)| {
                    let o = b.get(n).unwrap();
                    t.iter()
                        .zip(o.iter())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                })
                .sum::<f64>()
                .sqrt()
        };
        let mut d = dist(&ema, &params);
        for _ in 0..5 {
            ema_update(&mut ema, &params, 0.9).unwrap();
            let nd = dist(&ema, &params);
            assert!((nd - 0.9 * d).abs() < 1e-9 * d);
            d = nd;
        }
    }

    #[test]
    fn taped_loss_matches_dsm_loss_at() {
        for joint in [true, false] {
            let net = tiny_net(5, joint);
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let g0 = Graph::standard_normal(4, 2, 2, &mut rng);
            let noise = Graph::standard_normal(4, 2, 2, &mut rng);
            let mask = [true, true, true, false];
            let t = 0.42;
            let (lx_ref, le_ref) =
                dsm_loss_at(&net, &net.sde, &g0, &mask, t, &noise).unwrap();
            let mut tape = Tape::new();
            let vars = net.leaf_params(&mut tape);
            let (_, lx, le) =
                graph_loss_on_tape(&net, &mut tape, &vars, &g0, &mask, t, &noise).unwrap();
            assert!((lx - lx_ref).abs() < 1e-12, "{lx} vs {lx_ref}");
            assert!((le - le_ref).abs() < 1e-12, "{le} vs {le_ref}");
        }
    }

    #[test]
    fn linear_quadratic_gradient_is_machine_precision() {
        // loss(w) = Σ (x·w − y)²: analytic vs central differences
        let x = ndarray::arr2(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.25]]).into_dyn();
        let y = ndarray::arr2(&[[0.7], [-0.3], [0.1]]).into_dyn();
        let w0 = ndarray::arr2(&[[0.2], [-0.4]]).into_dyn();
        let loss = |w: &ArrayD<f64>| -> f64 {
            let mut tape = Tape::new();
            let wv = tape.leaf(w.clone());
            let xv = tape.leaf(x.clone());
            let pred = tape.matmul(xv, wv);
            let d = tape.sub_const(pred, &y);
            let sq = tape.mul(d, d);
            let l = tape.sum_all(sq);
            *tape.value(l).first().unwrap()
        };
        let mut tape = Tape::new();
        let wv = tape.leaf(w0.clone());
        let xv = tape.leaf(x.clone());
        let pred = tape.matmul(xv, wv);
        let d = tape.sub_const(pred, &y);
        let sq = tape.mul(d, d);
        let l = tape.sum_all(sq);
        let grads = tape.backward(l);
        let g = tape.grad_of(&grads, wv);
        let h = 1e-6;
        for idx in 0..w0.len() {
            let mut plus = w0.clone();
            plus.as_slice_mut().unwrap()[idx] += h;
            let mut minus = w0.clone();
            minus.as_slice_mut().unwrap()[idx] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = g.as_slice().unwrap()[idx];
            assert!((an - fd).abs() < 1e-8, "{an} vs {fd}");
        }
    }

    #[test]
    fn grad_check_full_network_on_three_nodes() {
        for joint in [true, false] {
            let net = tiny_net(7, joint);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let g0 = Graph::standard_normal(3, 2, 2, &mut rng);
            let noise = Graph::standard_normal(3, 2, 2, &mut rng);
            let report = grad_check(&net, &g0, &[true; 3], 0.5, &noise, 1e-5).unwrap();
            assert!(
                report.max_rel_error <= 1e-3,
                "joint={joint}: max rel error {} at {}",
                report.max_rel_error,
                report.worst_tensor
            );
            assert_eq!(report.checked, net.params.num_params());
        }
    }

    #[test]
    fn training_is_reproducible_and_logged() {
        let make_data = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let train: Vec<Graph> = (0..8)
                .map(|_| Graph::standard_normal(1, 1, 1, &mut rng))
                .collect();
            let test: Vec<Graph> = (0..4)
                .map(|_| Graph::standard_normal(1, 1, 1, &mut rng))
                .collect();
            (train, test)
        };
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 3,
            seed: 42,
            ..TrainConfig::default()
        };
        let (train_set, test_set) = make_data();
        let mut net1 = scalar_net(10);
        let (_, log1) = train(&mut net1, &train_set, &test_set, &cfg).unwrap();
        let mut net2 = scalar_net(10);
        let (ema2, log2) = train(&mut net2, &train_set, &test_set, &cfg).unwrap();

        assert_eq!(log1, log2.clone().tap_zero_seconds(&log1));
        assert_eq!(log1.records.len(), 3);
        for r in &log1.records {
            assert!(r.loss_x_train.is_finite() && r.loss_x_train >= 0.0);
            assert!(r.loss_e_test.is_finite() && r.loss_e_test >= 0.0);
        }
        // EMA stays close to (but distinct from) the raw parameters
        let mut diff = 0.0;
        for (name, p) in net2.params.iter() {
            let e = ema2.get(name).unwrap();
            diff += p.iter().zip(e.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
        assert!(diff > 0.0);
        // identical parameters after both runs
        for (name, p) in net1.params.iter() {
            assert_eq!(p, net2.params.get(name).unwrap(), "{name}");
        }
    }

    impl TrainLog {
        /// Copy wall-clock fields from `other` so that bitwise comparison
        /// covers only the deterministic loss columns.
        fn tap_zero_seconds(mut self, other: &TrainLog) -> TrainLog {
            for (r, o) in self.records.iter_mut().zip(&other.records) {
                r.seconds = o.seconds;
            }
            self
        }
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let train_set: Vec<Graph> = (0..8)
            .map(|_| Graph::standard_normal(2, 1, 1, &mut rng))
            .collect();
        let test_set: Vec<Graph> = (0..4)
            .map(|_| Graph::standard_normal(2, 1, 1, &mut rng))
            .collect();
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 10,
            seed: 7,
            ..TrainConfig::default()
        };
        let test_batch = GraphBatch::from_graphs(&test_set).unwrap();

        // Uninterrupted run over 10 epochs.
        let mut net_a = scalar_net(2);
        let (ema_a, log_a) = train(&mut net_a, &train_set, &test_set, &cfg).unwrap();

        // Run 5 epochs, snapshot as a checkpoint would, then resume.
        let mut net_b = scalar_net(2);
        let mut trainer = Trainer::new(&cfg, &net_b).unwrap();
        let mut log_b = TrainLog::default();
        for _ in 0..5 {
            log_b
                .records
                .push(trainer.run_epoch(&mut net_b, &train_set, Some(&test_batch)).unwrap());
        }
        assert_eq!(trainer.completed_epochs(), 5);
        let (ema_snap, opt_snap) = (trainer.ema().clone(), trainer.opt_state());
        drop(trainer);

        let mut resumed = Trainer::resume(&cfg, ema_snap, opt_snap, 5).unwrap();
        for _ in 0..5 {
            log_b
                .records
                .push(resumed.run_epoch(&mut net_b, &train_set, Some(&test_batch)).unwrap());
        }
        let ema_b = resumed.into_ema();

        assert_eq!(log_a, log_b.clone().tap_zero_seconds(&log_a));
        for (name, p) in net_a.params.iter() {
            assert_eq!(p, net_b.params.get(name).unwrap(), "raw {name}");
        }
        for (name, p) in ema_a.iter() {
            assert_eq!(p, ema_b.get(name).unwrap(), "ema {name}");
        }
    }

    #[test]
    fn csv_round_trip_format() {
        let log = TrainLog {
            records: vec![EpochRecord {
                epoch: 1,
                loss_x_train: 1.5,
                loss_e_train: 2.5,
                loss_x_test: 1.25,
                loss_e_test: 2.25,
                seconds: 0.5,
            }],
        };
        let csv = log.to_csv();
        assert!(csv.starts_with(
            "epoch,loss_x_train,loss_e_train,loss_x_test,loss_e_test,seconds\n"
        ));
        assert!(csv.contains("1,1.5,2.5,1.25,2.25,0.5"));
    }

    #[test]
    fn scalar_toy_test_loss_decreases() {
        // On the scalar narrow-Gaussian toy set the fixed-draw test loss
        // falls monotonically over the first 50 epochs for ≥ 90% of seeds.
        // (Unit-variance data leaves no descent room: a random init is
        // already near the optimal loss, so the toy uses σ = 0.1.)
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let narrow = |count: usize, rng: &mut ChaCha8Rng| -> Vec<Graph> {
            (0..count)
                .map(|_| {
                    let mut g = Graph::standard_normal(1, 1, 1, rng);
                    g.x *= 0.1;
                    g.e *= 0.1;
                    g
                })
                .collect()
        };
        let train_set = narrow(32, &mut rng);
        let test_set = narrow(32, &mut rng);
        let mut monotone = 0;
        let seeds = 10;
        for seed in 0..seeds {
            let mut net = scalar_net(100 + seed);
            let cfg = TrainConfig {
                learning_rate: 0.005,
                batch_size: 32,
                epochs: 50,
                seed,
                ..TrainConfig::default()
            };
            let (_, log) = train(&mut net, &train_set, &test_set, &cfg).unwrap();
            let ok = log
                .records
                .windows(2)
                .all(|w| w[1].loss_e_test <= w[0].loss_e_test);
            if ok {
                monotone += 1;
            }
        }
        assert!(monotone * 10 >= seeds * 9, "{monotone}/{seeds} monotone");
    }
}
