//! Command implementations behind the CLI surface.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use edgediff::ckpt::{load_checkpoint, save_checkpoint, Checkpoint};
use edgediff::data::{
    derive_seed, gen_clusters, gen_grid2d, gen_maze_dataset, gen_sbm, split, ClusterSpec,
    MazeSpec,
};
use edgediff::graph::{read_dataset_dir, read_jsonl, write_dataset_dir, write_jsonl, DatasetMeta};
use edgediff::metrics::{general_report, homogeneity, mdp_metrics, quantize_mdp, KernelSpec};
use edgediff::scorenet::param_specs;
use edgediff::sde::pc_sample;
use edgediff::train::Trainer;
use edgediff::{
    decode_category, EdgeDiffError, Graph, GraphBatch, NodeCategory, Result, SamplerConfig,
    ScoreNet, TrainLog,
};

use crate::config::{load_config, DatasetKind, RunConfig};

/// Seed stream tags, fed to `derive_seed` so that the split, the network
/// initialization, and the per-graph generators draw from disjoint streams
/// of one user-facing seed.
const SPLIT_STREAM: u64 = 0x53504C4954; // "SPLIT"
const INIT_STREAM: u64 = 0x494E4954; // "INIT"

const TRAIN_FRAC: f64 = 0.8;

/// Worker cap: `EDGEDIFF_THREADS` when set, otherwise the machine's
/// available parallelism. Results never depend on the cap because every
/// generated graph uses its own derived seed.
fn threads() -> Result<usize> {
    match std::env::var("EDGEDIFF_THREADS") {
        Err(_) => Ok(std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)),
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&v| v >= 1)
            .ok_or_else(|| {
                EdgeDiffError::invalid(format!(
                    "EDGEDIFF_THREADS must be a positive integer, got {s:?}"
                ))
            }),
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

/// Stochastic-block-model generation constants: two communities whose
/// sizes are drawn per graph, well separated in edge density.
const SBM_SIZE_RANGE: (usize, usize) = (4, 8);
const SBM_P_WITHIN: f64 = 0.6;
const SBM_P_BETWEEN: f64 = 0.1;
/// 2-D grid side ranges drawn per graph.
const GRID_SIDE_RANGE: (usize, usize) = (3, 5);

pub fn gen_data(dataset: DatasetKind, count: usize, seed: u64, out: &Path) -> Result<()> {
    if count == 0 {
        return Err(EdgeDiffError::invalid("--count must be >= 1"));
    }
    let (graphs, params) = match dataset {
        DatasetKind::Clusters => {
            let spec = ClusterSpec {
                n_graphs: count,
                ..ClusterSpec::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let graphs = gen_clusters(&spec, &mut rng)?;
            let params = serde_json::json!({
                "nodes": spec.n_nodes,
                "centers": spec.centers,
                "std": spec.std,
            });
            (graphs, params)
        }
        DatasetKind::MdpDet | DatasetKind::MdpNondet => {
            let spec = MazeSpec {
                deterministic: dataset == DatasetKind::MdpDet,
                seed,
                ..MazeSpec::default()
            };
            let graphs = gen_maze_dataset(&spec, count)?;
            let params = serde_json::json!({
                "side": spec.side,
                "n_blocks": spec.n_blocks,
                "n_start": spec.n_start,
                "n_finish": spec.n_finish,
                "deterministic": spec.deterministic,
            });
            (graphs, params)
        }
        DatasetKind::Sbm => {
            let (lo, hi) = SBM_SIZE_RANGE;
            let graphs = (0..count)
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
                    let sizes = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
                    gen_sbm(&sizes, SBM_P_WITHIN, SBM_P_BETWEEN, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let params = serde_json::json!({
                "communities": 2,
                "size_min": lo,
                "size_max": hi,
                "p_within": SBM_P_WITHIN,
                "p_between": SBM_P_BETWEEN,
            });
            (graphs, params)
        }
        DatasetKind::Grid2d => {
            let (lo, hi) = GRID_SIDE_RANGE;
            let graphs = (0..count)
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
                    let rows = rng.random_range(lo..=hi);
                    let cols = rng.random_range(lo..=hi);
                    gen_grid2d(rows, cols)
                })
                .collect::<Result<Vec<_>>>()?;
            let params = serde_json::json!({
                "rows_min": lo,
                "rows_max": hi,
                "cols_min": lo,
                "cols_max": hi,
            });
            (graphs, params)
        }
    };
    let (train, test) = split(&graphs, TRAIN_FRAC, derive_seed(seed, SPLIT_STREAM))?;
    let meta = DatasetMeta {
        generator: dataset.name().to_string(),
        seed,
        count_train: train.len(),
        count_test: test.len(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        params: Some(params),
    };
    write_dataset_dir(out, &train, &test, &meta)?;
    println!(
        "wrote {} train / {} test {} graphs to {}",
        train.len(),
        test.len(),
        dataset.name(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn checkpoint_extra(cfg: &RunConfig, nodes: usize) -> serde_json::Value {
    serde_json::json!({ "dataset": cfg.dataset.name(), "nodes": nodes })
}

/// Most frequent node count in the set (smallest on ties); the default
/// sample shape recorded in checkpoints.
fn modal_nodes(graphs: &[Graph]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for g in graphs {
        *counts.entry(g.n()).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .max_by_key(|&(n, c)| (c, std::cmp::Reverse(n)))
        .map(|(n, _)| n)
        .unwrap_or(0)
}

fn save_train_checkpoint(
    path: &Path,
    net: &ScoreNet,
    trainer: &Trainer,
    epoch: usize,
    extra: &serde_json::Value,
) -> Result<()> {
    let ckpt = Checkpoint {
        config: net.config.clone(),
        sde: net.sde,
        epoch,
        raw: net.params.clone(),
        ema: Some(trainer.ema().clone()),
        opt: Some(trainer.opt_state()),
        extra: Some(extra.clone()),
    };
    save_checkpoint(&ckpt, path)
}

pub fn train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    ckpt_every: usize,
) -> Result<()> {
    if ckpt_every == 0 {
        return Err(EdgeDiffError::invalid("--ckpt-every must be >= 1"));
    }
    let (train_set, test_set, meta) = read_dataset_dir(data)?;
    let dataset = DatasetKind::from_name(&meta.generator)?;
    let cfg = load_config(config, Some(dataset))?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INIT_STREAM));
    let mut net = ScoreNet::new(cfg.model.clone(), cfg.sde, &mut init_rng)?;
    let mut trainer = match resume {
        None => Trainer::new(&cfg.train, &net)?,
        Some(ckpt_path) => {
            let (ckpt, warnings) = load_checkpoint(ckpt_path)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            if ckpt.config != cfg.model || ckpt.sde != cfg.sde {
                return Err(EdgeDiffError::invalid(
                    "checkpoint configuration does not match the resolved run config; \
                     pass the config the run was started with",
                ));
            }
            let opt = ckpt.opt.ok_or_else(|| {
                EdgeDiffError::invalid(
                    "checkpoint carries no optimizer state and cannot seed --resume",
                )
            })?;
            net.params = ckpt.raw;
            let ema = ckpt.ema.unwrap_or_else(|| net.params.clone());
            Trainer::resume(&cfg.train, ema, opt, ckpt.epoch)?
        }
    };

    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&cfg).expect("config serializes"),
    )?;

    let test_batch = if test_set.is_empty() {
        None
    } else {
        Some(GraphBatch::from_graphs(&test_set)?)
    };
    let extra = checkpoint_extra(&cfg, modal_nodes(&train_set));
    let mut log = TrainLog::default();
    while trainer.completed_epochs() < cfg.train.epochs {
        let rec = trainer.run_epoch(&mut net, &train_set, test_batch.as_ref())?;
        println!(
            "epoch {:>5}  train x {:>10.6} e {:>10.6}  test x {:>10.6} e {:>10.6}  {:.2}s",
            rec.epoch,
            rec.loss_x_train,
            rec.loss_e_train,
            rec.loss_x_test,
            rec.loss_e_test,
            rec.seconds
        );
        let epoch = rec.epoch;
        log.records.push(rec);
        if epoch % ckpt_every == 0 && epoch < cfg.train.epochs {
            save_train_checkpoint(
                &out.join(format!("ckpt_epoch{epoch}.json")),
                &net,
                &trainer,
                epoch,
                &extra,
            )?;
        }
    }
    save_train_checkpoint(
        &out.join("model.json"),
        &net,
        &trainer,
        trainer.completed_epochs(),
        &extra,
    )?;

    // Appending on resume keeps one continuous CSV across interrupted runs.
    let log_path = out.join("log.csv");
    if resume.is_some() && log_path.exists() {
        let mut existing = std::fs::read_to_string(&log_path)?;
        for line in log.to_csv().lines().skip(1) {
            existing.push_str(line);
            existing.push('\n');
        }
        std::fs::write(&log_path, existing)?;
    } else {
        log.write_csv(&log_path)?;
    }
    println!(
        "trained to epoch {}; model and log written to {}",
        trainer.completed_epochs(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

/// Restore parameters from a checkpoint group, verifying every tensor the
/// architecture expects is present with the right shape.
fn restore_params(net: &mut ScoreNet, params: edgediff::ParamStore) -> Result<()> {
    for spec in param_specs(&net.config) {
        let tensor = params.get(&spec.name).map_err(|_| {
            EdgeDiffError::Checkpoint(format!("checkpoint is missing tensor {}", spec.name))
        })?;
        if tensor.shape() != spec.shape.as_slice() {
            return Err(EdgeDiffError::shape(
                format!("{:?}", spec.shape),
                format!("{:?}", tensor.shape()),
                &format!("checkpoint tensor {}", spec.name),
            ));
        }
    }
    net.params = params;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn sample(
    ckpt_path: &Path,
    num: usize,
    steps: usize,
    snr: f64,
    scale_eps: f64,
    seed: u64,
    out: &Path,
    nodes: Option<usize>,
) -> Result<()> {
    if num == 0 {
        return Err(EdgeDiffError::invalid("--num must be >= 1"));
    }
    let (ckpt, warnings) = load_checkpoint(ckpt_path)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let mut net = ScoreNet::new(
        ckpt.config.clone(),
        ckpt.sde,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let params = match ckpt.ema {
        Some(ema) => ema,
        None => ckpt.raw, // load_checkpoint already warned
    };
    restore_params(&mut net, params)?;

    let n = nodes
        .or_else(|| {
            ckpt.extra
                .as_ref()
                .and_then(|x| x.get("nodes"))
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
        })
        .ok_or_else(|| {
            EdgeDiffError::invalid("checkpoint does not record a node count; pass --nodes")
        })?;
    let sampler = SamplerConfig {
        steps,
        snr,
        scale_eps,
        ..SamplerConfig::default()
    };
    sampler.validate()?;

    let shape = (n, net.config.node_in, net.config.edge_in);
    let graphs = sample_parallel(&net, shape, &sampler, seed, num)?;
    write_jsonl(out, &graphs)?;
    println!("wrote {num} samples to {}", out.display());
    Ok(())
}

/// Draw `num` graphs across up to `EDGEDIFF_THREADS` workers. Graph `i`
/// always uses the RNG seeded with `derive_seed(seed, i)`, so the output
/// is identical for every worker count.
fn sample_parallel(
    net: &ScoreNet,
    shape: (usize, usize, usize),
    sampler: &SamplerConfig,
    seed: u64,
    num: usize,
) -> Result<Vec<Graph>> {
    let workers = threads()?.min(num);
    let results: Vec<(usize, Result<Graph>)> = std::thread::scope(|s| {
        let mut handles = Vec::new();
        for w in 0..workers {
            handles.push(s.spawn(move || {
                let mut done = Vec::new();
                let mut i = w;
                while i < num {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
                    done.push((i, pc_sample(net, shape, sampler, &net.sde, &mut rng)));
                    i += workers;
                }
                done
            }));
        }
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("sampler worker panicked"))
            .collect()
    });
    let mut slots: Vec<Option<Graph>> = (0..num).map(|_| None).collect();
    for (i, res) in results {
        slots[i] = Some(res?);
    }
    Ok(slots.into_iter().map(|g| g.expect("index covered")).collect())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Metric suite selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Degree/clustering MMD plus uniqueness and novelty.
    General,
    /// General metrics plus the six MDP measures.
    Mdp,
    /// General metrics plus cluster homogeneity and a scatter CSV.
    Clusters,
}

fn cluster_centers(meta: &DatasetMeta) -> Result<Vec<[f64; 2]>> {
    match meta.params.as_ref().and_then(|p| p.get("centers")) {
        None => Ok(ClusterSpec::default().centers.to_vec()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| {
            EdgeDiffError::invalid(format!("meta.json centers are malformed: {e}"))
        }),
    }
}

pub fn eval(
    reference: &Path,
    gen_file: &Path,
    suite: Suite,
    out: &Path,
    mdp_eps: f64,
    sigma: f64,
) -> Result<()> {
    let (train_set, _test_set, meta) = read_dataset_dir(reference)?;
    let generated = read_jsonl(gen_file)?;
    if generated.is_empty() {
        return Err(EdgeDiffError::invalid("generated set is empty"));
    }
    let kernel = KernelSpec { sigma };
    let mut report;
    match suite {
        Suite::General => report = general_report(&generated, &train_set, &kernel)?,
        Suite::Mdp => {
            let deterministic = match meta.generator.as_str() {
                "mdp-det" => true,
                "mdp-nondet" => false,
                other => {
                    return Err(EdgeDiffError::invalid(format!(
                        "mdp suite needs an mdp reference dataset, got {other:?}"
                    )))
                }
            };
            // Sampler output carries residual noise on every entry; MDP
            // metrics are defined on the probability grid, so the whole
            // suite runs on the quantized copies.
            let quantized: Vec<Graph> = generated.iter().map(quantize_mdp).collect();
            report = general_report(&quantized, &train_set, &kernel)?;
            report.mdp = Some(mdp_metrics(&quantized, deterministic, mdp_eps)?);
        }
        Suite::Clusters => {
            report = general_report(&generated, &train_set, &kernel)?;
            let centers = cluster_centers(&meta)?;
            report.homogeneity = Some(homogeneity(&generated, &centers)?);
            write_scatter(&scatter_path(out), &generated)?;
        }
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(out, json)?;
    print!("{}", report.to_table());
    Ok(())
}

fn scatter_path(out: &Path) -> PathBuf {
    out.with_extension("scatter.csv")
}

/// All generated edge 2-vectors (ordered pairs, self-loops excluded), one
/// `e0,e1` row per edge, for external scatter plotting.
fn write_scatter(path: &Path, graphs: &[Graph]) -> Result<()> {
    let mut csv = String::from("e0,e1\n");
    for g in graphs {
        if g.edge_channels() != 2 {
            return Err(EdgeDiffError::shape(
                "2 edge channels",
                format!("{}", g.edge_channels()),
                "clusters scatter export",
            ));
        }
        let n = g.n();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let _ = writeln!(csv, "{},{}", g.e[[i, j, 0]], g.e[[i, j, 1]]);
                }
            }
        }
    }
    std::fs::write(path, csv)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// render-maze
// ---------------------------------------------------------------------------

/// Maze rendering format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderFormat {
    Text,
    Svg,
}

const MAZE_SIDE: usize = 5;

fn decode_cells(g: &Graph) -> Result<[[Option<NodeCategory>; MAZE_SIDE]; MAZE_SIDE]> {
    let n = MAZE_SIDE * MAZE_SIDE;
    if g.n() != n || g.node_channels() != 3 {
        return Err(EdgeDiffError::shape(
            format!("{n} nodes, 3 node channels"),
            format!("{} nodes, {} node channels", g.n(), g.node_channels()),
            "render-maze",
        ));
    }
    let half = (MAZE_SIDE - 1) as f64 / 2.0;
    let mut cells = [[None; MAZE_SIDE]; MAZE_SIDE];
    for i in 0..n {
        let cat = decode_category(g.x[[i, 0]]);
        let col = (g.x[[i, 1]] * half + half).round();
        let row = (g.x[[i, 2]] * half + half).round();
        let hi = (MAZE_SIDE - 1) as f64;
        if (0.0..=hi).contains(&col) && (0.0..=hi).contains(&row) {
            let (r, c) = (row as usize, col as usize);
            // first node claiming a cell wins; later collisions are dropped
            if cells[r][c].is_none() {
                cells[r][c] = Some(cat);
            }
        }
    }
    Ok(cells)
}

fn glyph(cell: Option<NodeCategory>) -> char {
    match cell {
        Some(NodeCategory::Block) => '#',
        Some(NodeCategory::Empty) => '.',
        Some(NodeCategory::Start) => 'S',
        Some(NodeCategory::Finish) => 'F',
        None => '?',
    }
}

fn svg_fill(cell: Option<NodeCategory>) -> &'static str {
    match cell {
        Some(NodeCategory::Block) => "#2f5597",
        Some(NodeCategory::Empty) => "#d6e4f7",
        Some(NodeCategory::Start) => "#ffd700",
        Some(NodeCategory::Finish) => "#2e8b57",
        None => "#bbbbbb",
    }
}

pub fn render_maze(input: &Path, index: usize, format: RenderFormat) -> Result<()> {
    let graphs = read_jsonl(input)?;
    let g = graphs.get(index).ok_or_else(|| {
        EdgeDiffError::invalid(format!(
            "--index {index} is out of range; {} has {} graphs",
            input.display(),
            graphs.len()
        ))
    })?;
    let cells = decode_cells(g)?;
    match format {
        RenderFormat::Text => {
            let mut text = String::new();
            for row in &cells {
                for &cell in row {
                    text.push(glyph(cell));
                }
                text.push('\n');
            }
            print!("{text}");
        }
        RenderFormat::Svg => {
            const CELL: usize = 50;
            let side_px = MAZE_SIDE * CELL;
            let mut svg = format!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{side_px}\" \
                 height=\"{side_px}\" viewBox=\"0 0 {side_px} {side_px}\">\n"
            );
            for (r, row) in cells.iter().enumerate() {
                for (c, &cell) in row.iter().enumerate() {
                    let _ = writeln!(
                        svg,
                        "  <rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" \
                         fill=\"{}\" stroke=\"#ffffff\"/>",
                        c * CELL,
                        r * CELL,
                        svg_fill(cell)
                    );
                }
            }
            svg.push_str("</svg>\n");
            print!("{svg}");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// print-config
// ---------------------------------------------------------------------------

pub fn print_config(config: Option<&Path>, dataset: Option<DatasetKind>) -> Result<()> {
    let cfg = load_config(config, dataset)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&cfg).expect("config serializes")
    );
    Ok(())
}
