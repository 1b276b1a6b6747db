//! Run configuration: strict JSON parsing and per-dataset defaults.
//!
//! A configuration file is a JSON document whose sections mirror the core
//! config structs. Every section is a patch: omitted keys fall back to the
//! defaults of the selected dataset, and unknown keys anywhere are errors
//! so hyperparameter typos cannot pass silently. `resolve` produces a
//! fully-specified [`RunConfig`]; serializing that and parsing it again
//! yields the identical configuration (the `print-config` round trip).

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use edgediff::graph::DEFAULT_MASK_EPS;
use edgediff::{EdgeDiffError, Result, SamplerConfig, ScoreNetConfig, TrainConfig, VpSdeConfig};

/// Dataset selector shared by the CLI flags and the config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Complete 10-node graphs with 2-D Gaussian-cluster edge attributes.
    Clusters,
    /// 5x5 deterministic MDP mazes.
    MdpDet,
    /// 5x5 non-deterministic MDP mazes.
    MdpNondet,
    /// Two-community stochastic block model graphs.
    Sbm,
    /// Rectangular 2-D grid graphs.
    Grid2d,
}

impl DatasetKind {
    /// Canonical name used in dataset metadata and file naming.
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Clusters => "clusters",
            DatasetKind::MdpDet => "mdp-det",
            DatasetKind::MdpNondet => "mdp-nondet",
            DatasetKind::Sbm => "sbm",
            DatasetKind::Grid2d => "grid2d",
        }
    }

    /// Parse back from the canonical name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "clusters" => Ok(DatasetKind::Clusters),
            "mdp-det" => Ok(DatasetKind::MdpDet),
            "mdp-nondet" => Ok(DatasetKind::MdpNondet),
            "sbm" => Ok(DatasetKind::Sbm),
            "grid2d" => Ok(DatasetKind::Grid2d),
            other => Err(EdgeDiffError::invalid(format!(
                "unknown dataset {other:?}; expected one of clusters, mdp-det, \
                 mdp-nondet, sbm, grid2d"
            ))),
        }
    }

    /// `(node_channels, edge_channels)` of graphs in this dataset.
    pub fn channels(self) -> (usize, usize) {
        match self {
            DatasetKind::Clusters => (1, 2),
            DatasetKind::MdpDet | DatasetKind::MdpNondet => (3, 4),
            DatasetKind::Sbm | DatasetKind::Grid2d => (1, 1),
        }
    }
}

/// Score-network ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Joint network and GNM edge term both enabled.
    Full,
    /// GNM edge term only; node and edge scores use disjoint networks.
    GnmOnly,
    /// Joint network only; the GNM edge-information term is removed.
    JointOnly,
    /// Neither: disjoint networks without the edge-information term.
    Vanilla,
}

impl Ablation {
    /// `(joint_network, gnm_edge_term)` flags for this variant.
    pub fn flags(self) -> (bool, bool) {
        match self {
            Ablation::Full => (true, true),
            Ablation::GnmOnly => (false, true),
            Ablation::JointOnly => (true, false),
            Ablation::Vanilla => (false, false),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub seed: u64,
    pub ablation: Ablation,
    pub sde: VpSdeConfig,
    pub model: ScoreNetConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
}

impl RunConfig {
    /// Dataset-specific defaults with every field concrete.
    pub fn defaults(dataset: DatasetKind) -> RunConfig {
        let (node_in, edge_in) = dataset.channels();
        let (layers, hidden_dim, batch_size, beta_max) = match dataset {
            DatasetKind::Clusters => (2, 16, 256, 3.0),
            DatasetKind::MdpDet | DatasetKind::MdpNondet => (5, 32, 256, 3.0),
            DatasetKind::Sbm => (4, 32, 26, 1.0),
            DatasetKind::Grid2d => (4, 32, 7, 1.0),
        };
        RunConfig {
            dataset,
            seed: 0,
            ablation: Ablation::Full,
            sde: VpSdeConfig {
                beta_max,
                ..VpSdeConfig::default()
            },
            model: ScoreNetConfig {
                layers,
                flows: 2,
                heads: 4,
                hidden_dim,
                node_in,
                edge_in,
                hidden_channels: 8,
                final_channels: 4,
                mask_eps: DEFAULT_MASK_EPS,
                joint_network: true,
                gnm_edge_term: true,
            },
            train: TrainConfig {
                batch_size,
                epochs: 5000,
                ..TrainConfig::default()
            },
            sampler: SamplerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sde.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.sampler.validate()?;
        let (node_in, edge_in) = self.dataset.channels();
        if self.model.node_in != node_in || self.model.edge_in != edge_in {
            return Err(EdgeDiffError::invalid(format!(
                "dataset {} carries ({node_in}, {edge_in}) node/edge channels but the \
                 model is configured for ({}, {})",
                self.dataset.name(),
                self.model.node_in,
                self.model.edge_in,
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Patch-style config files
// ---------------------------------------------------------------------------

/// Config file as written by the user: every key optional, unknown keys
/// rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: Option<DatasetKind>,
    pub seed: Option<u64>,
    pub ablation: Option<Ablation>,
    #[serde(default)]
    pub sde: SdePatch,
    #[serde(default)]
    pub model: ModelPatch,
    #[serde(default)]
    pub train: TrainPatch,
    #[serde(default)]
    pub sampler: SamplerPatch,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdePatch {
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    pub t_end: Option<f64>,
    pub t_eps: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPatch {
    pub layers: Option<usize>,
    pub flows: Option<usize>,
    pub heads: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub node_in: Option<usize>,
    pub edge_in: Option<usize>,
    pub hidden_channels: Option<usize>,
    pub final_channels: Option<usize>,
    pub mask_eps: Option<f64>,
    pub joint_network: Option<bool>,
    pub gnm_edge_term: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPatch {
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub ema_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerPatch {
    pub steps: Option<usize>,
    pub snr: Option<f64>,
    pub scale_eps: Option<f64>,
    pub corrector_steps_per_predictor: Option<usize>,
}

fn set<T>(target: &mut T, patch: Option<T>) {
    if let Some(v) = patch {
        *target = v;
    }
}

impl RunConfigFile {
    /// Parse a config file, turning serde's unknown-key message (which
    /// lists the accepted keys) into a usage error.
    pub fn parse(text: &str) -> Result<RunConfigFile> {
        serde_json::from_str(text)
            .map_err(|e| EdgeDiffError::invalid(format!("config: {e}")))
    }

    /// Resolve against dataset defaults.
    ///
    /// `dataset_hint` is the selector from outside the file (CLI flag or
    /// dataset metadata); when the file also names a dataset the two must
    /// agree. Precedence within the model section: defaults, then the
    /// `ablation` flag pair, then explicit `joint_network`/`gnm_edge_term`
    /// keys.
    pub fn resolve(&self, dataset_hint: Option<DatasetKind>) -> Result<RunConfig> {
        let dataset = match (self.dataset, dataset_hint) {
            (Some(a), Some(b)) if a != b => {
                return Err(EdgeDiffError::invalid(format!(
                    "config names dataset {} but {} was selected",
                    a.name(),
                    b.name()
                )))
            }
            (Some(a), _) => a,
            (None, Some(b)) => b,
            (None, None) => {
                return Err(EdgeDiffError::invalid(
                    "no dataset selected: set \"dataset\" in the config or pass --dataset",
                ))
            }
        };
        let mut cfg = RunConfig::defaults(dataset);
        set(&mut cfg.seed, self.seed);
        // one seed drives the whole run unless train.seed is set explicitly
        cfg.train.seed = cfg.seed;
        set(&mut cfg.ablation, self.ablation);
        let (joint, gnm) = cfg.ablation.flags();
        cfg.model.joint_network = joint;
        cfg.model.gnm_edge_term = gnm;

        set(&mut cfg.sde.beta_min, self.sde.beta_min);
        set(&mut cfg.sde.beta_max, self.sde.beta_max);
        set(&mut cfg.sde.t_end, self.sde.t_end);
        set(&mut cfg.sde.t_eps, self.sde.t_eps);

        set(&mut cfg.model.layers, self.model.layers);
        set(&mut cfg.model.flows, self.model.flows);
        set(&mut cfg.model.heads, self.model.heads);
        set(&mut cfg.model.hidden_dim, self.model.hidden_dim);
        set(&mut cfg.model.node_in, self.model.node_in);
        set(&mut cfg.model.edge_in, self.model.edge_in);
        set(&mut cfg.model.hidden_channels, self.model.hidden_channels);
        set(&mut cfg.model.final_channels, self.model.final_channels);
        set(&mut cfg.model.mask_eps, self.model.mask_eps);
        set(&mut cfg.model.joint_network, self.model.joint_network);
        set(&mut cfg.model.gnm_edge_term, self.model.gnm_edge_term);

        set(&mut cfg.train.learning_rate, self.train.learning_rate);
        set(&mut cfg.train.weight_decay, self.train.weight_decay);
        set(&mut cfg.train.ema_decay, self.train.ema_decay);
        set(&mut cfg.train.batch_size, self.train.batch_size);
        set(&mut cfg.train.epochs, self.train.epochs);
        set(&mut cfg.train.seed, self.train.seed);

        set(&mut cfg.sampler.steps, self.sampler.steps);
        set(&mut cfg.sampler.snr, self.sampler.snr);
        set(&mut cfg.sampler.scale_eps, self.sampler.scale_eps);
        set(
            &mut cfg.sampler.corrector_steps_per_predictor,
            self.sampler.corrector_steps_per_predictor,
        );

        cfg.validate()?;
        Ok(cfg)
    }
}

/// Load and resolve an optional config file.
pub fn load_config(
    path: Option<&std::path::Path>,
    dataset_hint: Option<DatasetKind>,
) -> Result<RunConfig> {
    let file = match path {
        Some(p) => RunConfigFile::parse(&std::fs::read_to_string(p)?)?,
        None => RunConfigFile::default(),
    };
    file.resolve(dataset_hint)
}

// ---------------------------------------------------------------------------
