//! Multi-round simulation on synthetic planted-cluster pools.
//!
//! There is no real model here. A mock predictor shrinks the segmentation
//! entropy of every unlabeled instance by `decay^c`, where `c` counts labeled
//! instances from the same planted cluster, and leaves embeddings alone.
//! Strategies are compared on proxy metrics: how many planted clusters have
//! been labeled, how redundant each batch is, and how much uncertainty is
//! left in the pool.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, SelectionConfig, Strategy};
use crate::model::{ImagePrediction, InstancePrediction, Mask, Pool, PoolState, PoolStateError};
use crate::simgraph::cosine_similarity;
use crate::strategies::{self, StrategyError};
use crate::uncertainty::binary_entropy;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("cannot place {clusters} clusters with centre similarity {inter} in dimension {dim}")]
    InfeasibleSeparation { clusters: usize, inter: f64, dim: usize },
    #[error("intra-cluster similarity {intra} must exceed inter-cluster similarity {inter} and lie below 1")]
    SimilarityGap { intra: f64, inter: f64 },
    #[error("invalid pool spec: {0}")]
    Spec(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Selection(#[from] ConfigError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    PoolState(#[from] PoolStateError),
    #[error("round {round}: {strategy} selected {got} images, expected {expected}")]
    Budget {
        strategy: Strategy,
        round: usize,
        got: usize,
        expected: usize,
    },
}

/// Which planted clusters carry high segmentation entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyProfile {
    /// Clusters `0..hot_clusters` are the uncertain ones.
    pub hot_clusters: usize,
    pub hot_se: f64,
    pub cold_se: f64,
    /// Half-width of the uniform jitter added to each instance's SE.
    pub se_jitter: f64,
}

impl Default for UncertaintyProfile {
    fn default() -> Self {
        UncertaintyProfile {
            hot_clusters: 5,
            hot_se: 0.6,
            cold_se: 0.2,
            se_jitter: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticPoolSpec {
    pub num_images: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub num_clusters: usize,
    /// Expected cosine similarity between two instances of one cluster.
    pub intra_similarity: f64,
    /// Cosine similarity between cluster centres.
    pub inter_similarity: f64,
    pub embedding_dim: usize,
    pub num_classes: usize,
    pub mask_size: usize,
    pub profile: UncertaintyProfile,
    pub seed: u64,
}

impl Default for SyntheticPoolSpec {
    fn default() -> Self {
        SyntheticPoolSpec {
            num_images: 400,
            min_instances: 1,
            max_instances: 4,
            num_clusters: 20,
            intra_similarity: 0.95,
            inter_similarity: 0.0,
            embedding_dim: 32,
            num_classes: 4,
            mask_size: 4,
            profile: UncertaintyProfile::default(),
            seed: 0,
        }
    }
}

/// Planted cluster of every instance, plus the SE it starts with.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub num_clusters: usize,
    pub cluster_of: BTreeMap<String, usize>,
    pub base_se: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPool {
    pub pool: Pool,
    pub truth: GroundTruth,
}

/// Mask probability `p <= 0.5` whose binary entropy equals `target`.
pub fn probability_for_entropy(target: f64) -> f64 {
    let target = target.clamp(0.0, std::f64::consts::LN_2);
    if target == 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if binary_entropy(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn orthonormal_basis(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Draws a planted-cluster pool. Identical specs give identical pools.
pub fn generate_pool(spec: &SyntheticPoolSpec) -> Result<SyntheticPool, SimulationError> {
    if spec.num_clusters == 0 {
        return Err(SimulationError::Spec("num_clusters must be at least 1".into()));
    }
    if spec.num_classes == 0 || spec.embedding_dim == 0 || spec.mask_size == 0 {
        return Err(SimulationError::Spec(
            "num_classes, embedding_dim and mask_size must be positive".into(),
        ));
    }
    if spec.min_instances > spec.max_instances {
        return Err(SimulationError::Spec("min_instances exceeds max_instances".into()));
    }
    let (intra, inter) = (spec.intra_similarity, spec.inter_similarity);
    if !(inter >= 0.0 && intra > inter && intra < 1.0) {
        return Err(SimulationError::SimilarityGap { intra, inter });
    }
    let shared = usize::from(inter > 0.0);
    if spec.num_clusters + shared > spec.embedding_dim {
        return Err(SimulationError::InfeasibleSeparation {
            clusters: spec.num_clusters,
            inter,
            dim: spec.embedding_dim,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.embedding_dim;
    let basis = orthonormal_basis(spec.num_clusters + shared, dim, &mut rng);
    let centers: Vec<Vec<f64>> = (0..spec.num_clusters)
        .map(|c| {
            let own = &basis[c + shared];
            if shared == 1 {
                let (a, b) = (inter.sqrt(), (1.0 - inter).sqrt());
                basis[0].iter().zip(own).map(|(s, o)| a * s + b * o).collect()
            } else {
                own.clone()
            }
        })
        .collect();
    // Two draws c + e1, c + e2 with e ~ N(0, s^2 I) have cosine ~ 1 / (1 + d s^2).
    let spread = ((1.0 / intra - 1.0) / dim as f64).sqrt();
    let noise = Normal::new(0.0, spread).expect("finite spread");
    let logit_noise = Normal::new(0.0, 0.3).expect("finite");

    let profile = &spec.profile;
    let mut truth = GroundTruth {
        num_clusters: spec.num_clusters,
        ..Default::default()
    };
    let mut images = Vec::with_capacity(spec.num_images);
    for i in 0..spec.num_images {
        let image_id = format!("img{i:05}");
        let n = rng.random_range(spec.min_instances..=spec.max_instances);
        let mut instances = Vec::with_capacity(n);
        for j in 0..n {
            let cluster = rng.random_range(0..spec.num_clusters);
            let hot = cluster < profile.hot_clusters;

            let mut emb: Vec<f64> = centers[cluster].iter().map(|c| c + noise.sample(&mut rng)).collect();
            let norm = emb.iter().map(|x| x * x).sum::<f64>().sqrt();
            emb.iter_mut().for_each(|x| *x /= norm);

            let dominant = cluster % spec.num_classes;
            let confidence = if hot { 1.0 } else { 4.0 };
            let logits: Vec<f64> = (0..spec.num_classes)
                .map(|k| logit_noise.sample(&mut rng) + if k == dominant { confidence } else { 0.0 })
                .collect();

            let base = if hot { profile.hot_se } else { profile.cold_se };
            let jitter = if profile.se_jitter > 0.0 {
                rng.random_range(-profile.se_jitter..=profile.se_jitter)
            } else {
                0.0
            };
            let se = (base + jitter).clamp(1e-4, std::f64::consts::LN_2 - 1e-6);
            let size_ratio = rng.random_range(0.02..0.3);

            let instance_id = format!("{image_id}-{j:02}");
            truth.cluster_of.insert(instance_id.clone(), cluster);
            truth.base_se.insert(instance_id.clone(), se);
            instances.push(InstancePrediction {
                instance_id,
                image_id: image_id.clone(),
                class_probs: softmax(&logits),
                embedding: emb,
                size_ratio,
                mask: Some(Mask::constant(
                    spec.mask_size,
                    spec.mask_size,
                    probability_for_entropy(se),
                )),
                seg_entropy: None,
            });
        }
        images.push(ImagePrediction::new(image_id, instances));
    }
    let pool = Pool::new(images).map_err(|e| SimulationError::Spec(e.to_string()))?;
    Ok(SyntheticPool { pool, truth })
}

/// Labeled instance count per planted cluster.
fn labeled_per_cluster(pool: &Pool, truth: &GroundTruth, labeled: &BTreeSet<String>) -> Vec<usize> {
    let mut counts = vec![0usize; truth.num_clusters];
    for id in labeled {
        if let Some(img) = pool.get(id) {
            for inst in &img.instances {
                if let Some(&c) = truth.cluster_of.get(&inst.instance_id) {
                    counts[c] += 1;
                }
            }
        }
    }
    counts
}

/// Predictions after "retraining" on `labeled`: each unlabeled instance's SE
/// becomes `base_se * decay^c` for `c` labeled instances of its cluster.
pub fn mock_predictor(pool: &Pool, truth: &GroundTruth, labeled: &BTreeSet<String>, decay: f64) -> Pool {
    let counts = labeled_per_cluster(pool, truth, labeled);
    pool.map_images(|img| {
        if labeled.contains(&img.image_id) {
            return img.clone();
        }
        let mut img = img.clone();
        for inst in &mut img.instances {
            let (Some(&c), Some(&base)) = (
                truth.cluster_of.get(&inst.instance_id),
                truth.base_se.get(&inst.instance_id),
            ) else {
                continue;
            };
            if counts[c] == 0 {
                continue;
            }
            let se = base * decay.powi(counts[c] as i32);
            let p = probability_for_entropy(se);
            match &mut inst.mask {
                Some(mask) => mask.values.iter_mut().for_each(|v| *v = p),
                None => inst.seg_entropy = Some(se),
            }
        }
        img
    })
}

/// Fraction of planted clusters with at least one labeled instance.
pub fn cluster_coverage(pool: &Pool, truth: &GroundTruth, labeled: &BTreeSet<String>) -> f64 {
    let counts = labeled_per_cluster(pool, truth, labeled);
    counts.iter().filter(|&&c| c > 0).count() as f64 / truth.num_clusters as f64
}

fn redundancy(pool: &Pool, selected: &[String]) -> f64 {
    let embs: Vec<&[f64]> = selected
        .iter()
        .filter_map(|id| pool.get(id))
        .flat_map(|img| img.instances.iter().map(|i| i.embedding.as_slice()))
        .collect();
    if embs.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..embs.len() {
        for b in a + 1..embs.len() {
            total += cosine_similarity(embs[a], embs[b]).unwrap_or(0.0);
            pairs += 1;
        }
    }
    total / pairs as f64
}

fn mean_pool_uncertainty(pool: &Pool, unlabeled: &BTreeSet<String>) -> f64 {
    let ses: Vec<f64> = unlabeled
        .iter()
        .filter_map(|id| pool.get(id))
        .flat_map(|img| img.instances.iter().map(|i| i.segmentation_entropy()))
        .collect();
    if ses.is_empty() {
        0.0
    } else {
        ses.iter().sum::<f64>() / ses.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    /// 0 is the initial labeled set.
    pub round: usize,
    pub selected: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub cluster_coverage: f64,
    /// Mean pairwise cosine similarity of the instances in this round's batch.
    pub redundancy: f64,
    /// Mean SE over the instances still unlabeled after the round.
    pub mean_pool_uncertainty: f64,
}

fn default_initial_fraction() -> f64 {
    0.25
}
fn default_decay() -> f64 {
    0.5
}
fn default_target() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Hyperparameters shared by every strategy; its `strategy` field is
    /// replaced per run and its `rounds` field is not used.
    pub selection: SelectionConfig,
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_initial_fraction")]
    pub initial_labeled_fraction: f64,
    /// Per-labeled-instance SE multiplier for the mock predictor, in (0, 1).
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Number of rounds; when absent, enough rounds to label
    /// `target_labeled_fraction` of the pool.
    #[serde(default)]
    pub rounds: Option<usize>,
    #[serde(default = "default_target")]
    pub target_labeled_fraction: f64,
}

impl SimulationConfig {
    pub fn new(selection: SelectionConfig, strategies: Vec<Strategy>) -> Self {
        SimulationConfig {
            selection,
            strategies,
            initial_labeled_fraction: default_initial_fraction(),
            decay: default_decay(),
            rounds: None,
            target_labeled_fraction: default_target(),
        }
    }

    fn validate(&self) -> Result<(), SimulationError> {
        let mut sel = self.selection.clone();
        sel.rounds = sel.rounds.max(1);
        sel.validate()?;
        if !(0.0..1.0).contains(&self.initial_labeled_fraction) {
            return Err(SimulationError::Config(
                "initial_labeled_fraction must lie in [0, 1)".into(),
            ));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(SimulationError::Config("decay must lie in (0, 1)".into()));
        }
        if !(self.target_labeled_fraction > 0.0 && self.target_labeled_fraction <= 1.0) {
            return Err(SimulationError::Config(
                "target_labeled_fraction must lie in (0, 1]".into(),
            ));
        }
        if self.rounds == Some(0) {
            return Err(SimulationError::Config("rounds must be positive".into()));
        }
        Ok(())
    }
}

/// Rounds of `budget` images needed to grow `initial` labeled images to at
/// least `target` of `total`.
pub fn rounds_to_reach(total: usize, initial: usize, budget: usize, target: f64) -> usize {
    let needed = (target * total as f64).ceil() as usize;
    needed.saturating_sub(initial).div_ceil(budget.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub metrics: Vec<RoundMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub tool_version: &'static str,
    pub spec: SyntheticPoolSpec,
    pub config: SimulationConfig,
    pub rounds: usize,
    pub initial_labeled: usize,
    pub runs: Vec<StrategyRun>,
}

impl SimulationReport {
    /// Flat `round,strategy,metric,value` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,strategy,metric,value\n");
        for run in &self.runs {
            for m in &run.metrics {
                let rows: [(&str, f64); 5] = [
                    ("selected", m.selected as f64),
                    ("labeled", m.labeled as f64),
                    ("cluster_coverage", m.cluster_coverage),
                    ("redundancy", m.redundancy),
                    ("mean_pool_uncertainty", m.mean_pool_uncertainty),
                ];
                for (name, v) in rows {
                    let _ = writeln!(out, "{},{},{},{}", m.round, run.strategy, name, v);
                }
            }
        }
        out
    }
}

/// Seeded initial labeled set shared by every strategy.
pub fn initial_labeled(pool: &Pool, fraction: f64, seed: u64) -> BTreeSet<String> {
    let ids: Vec<&str> = pool.image_ids().collect();
    let n = (fraction * ids.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1abe_1ed0_0000);
    index::sample(&mut rng, ids.len(), n.min(ids.len()))
        .into_iter()
        .map(|i| ids[i].to_owned())
        .collect()
}

fn round_metrics(
    round: usize,
    pool: &Pool,
    truth: &GroundTruth,
    state: &PoolState,
    selected: &[String],
) -> RoundMetrics {
    RoundMetrics {
        round,
        selected: selected.len(),
        labeled: state.labeled.len(),
        unlabeled: state.unlabeled.len(),
        cluster_coverage: cluster_coverage(pool, truth, &state.labeled),
        redundancy: redundancy(pool, selected),
        mean_pool_uncertainty: mean_pool_uncertainty(pool, &state.unlabeled),
    }
}

/// Runs `rounds` selection cycles for one strategy from `initial`.
pub fn run_strategy(
    synthetic: &SyntheticPool,
    config: &SimulationConfig,
    strategy: Strategy,
    initial: &BTreeSet<String>,
    rounds: usize,
) -> Result<StrategyRun, SimulationError> {
    let base = &synthetic.pool;
    let truth = &synthetic.truth;
    let mut state = PoolState::from_pool(base, initial.iter().cloned());
    let mut preds = mock_predictor(base, truth, &state.labeled, config.decay);
    let mut metrics = vec![round_metrics(0, &preds, truth, &state, &[])];

    for round in 1..=rounds {
        let mut cfg = config.selection.clone();
        cfg.strategy = strategy;
        cfg.seed = config.selection.seed.wrapping_add(round as u64);
        let expected = cfg.budget.min(state.unlabeled.len());
        let out = strategies::select(&preds, &state, &cfg)?;
        if out.selected_images.len() != expected {
            return Err(SimulationError::Budget {
                strategy,
                round,
                got: out.selected_images.len(),
                expected,
            });
        }
        state = state.apply_round(&out.selected_images)?;
        preds = mock_predictor(base, truth, &state.labeled, config.decay);
        metrics.push(round_metrics(round, &preds, truth, &state, &out.selected_images));
    }
    Ok(StrategyRun { strategy, metrics })
}

/// Generates the pool once and runs every configured strategy on it from
/// the same initial labeled set.
pub fn run_simulation(
    spec: &SyntheticPoolSpec,
    config: &SimulationConfig,
) -> Result<SimulationReport, SimulationError> {
    config.validate()?;
    let synthetic = generate_pool(spec)?;
    let initial = initial_labeled(&synthetic.pool, config.initial_labeled_fraction, config.selection.seed);
    let rounds = config.rounds.unwrap_or_else(|| {
        rounds_to_reach(
            synthetic.pool.len(),
            initial.len(),
            config.selection.budget,
            config.target_labeled_fraction,
        )
    });

    let run = |s: &Strategy| run_strategy(&synthetic, config, *s, &initial, rounds);
    #[cfg(feature = "parallel")]
    let runs: Vec<Result<StrategyRun, SimulationError>> = {
        use rayon::prelude::*;
        config.strategies.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<Result<StrategyRun, SimulationError>> = config.strategies.iter().map(run).collect();

    Ok(SimulationReport {
        tool_version: crate::VERSION,
        spec: spec.clone(),
        config: config.clone(),
        rounds,
        initial_labeled: initial.len(),
        runs: runs.into_iter().collect::<Result<_, _>>()?,
    })
}
