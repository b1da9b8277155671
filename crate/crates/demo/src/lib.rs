//! Browser demo: planted-cluster pools, one selection round drawn in 2-D,
//! a multi-round coverage comparison, and a similarity-threshold sweep.
//!
//! Every export takes and returns JSON strings so the page needs no glue
//! beyond `wasm-bindgen`'s generated module.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use taudis::model::{ImagePrediction, PoolState};
use taudis::sim::{
    generate_pool, run_simulation, SimulationConfig, SyntheticPool, SyntheticPoolSpec, UncertaintyProfile,
};
use taudis::strategies::{self, taudis_trace, unlabeled_images};
use taudis::{SelectionConfig, Strategy};
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct PoolParams {
    pub num_images: usize,
    pub num_clusters: usize,
    pub hot_clusters: usize,
    pub max_instances: usize,
    pub budget: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for PoolParams {
    fn default() -> Self {
        PoolParams {
            num_images: 150,
            num_clusters: 12,
            hot_clusters: 3,
            max_instances: 2,
            budget: 8,
            alpha: 12.0,
            beta: 1.5,
            sigma: 0.8,
            seed: 4,
        }
    }
}

impl PoolParams {
    fn spec(&self) -> SyntheticPoolSpec {
        SyntheticPoolSpec {
            num_images: self.num_images,
            max_instances: self.max_instances.max(1),
            num_clusters: self.num_clusters,
            embedding_dim: (self.num_clusters + 1).max(16),
            profile: UncertaintyProfile {
                hot_clusters: self.hot_clusters,
                ..Default::default()
            },
            seed: self.seed,
            ..Default::default()
        }
    }

    fn selection(&self, strategy: Strategy) -> SelectionConfig {
        let mut cfg = SelectionConfig::new(strategy, self.budget);
        cfg.alpha = self.alpha;
        cfg.beta = self.beta;
        cfg.sigma = self.sigma;
        cfg.seed = self.seed;
        cfg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Point {
    pub instance_id: String,
    pub image_id: String,
    pub cluster: usize,
    pub hot: bool,
    pub x: f64,
    pub y: f64,
    pub se: f64,
    pub candidate: bool,
    pub representative: bool,
    /// Its image was picked by the two-step strategy.
    pub taudis: bool,
    /// Its image was picked by plain WSE ranking.
    pub wse: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundView {
    pub points: Vec<Point>,
    pub num_clusters: usize,
    pub taudis_images: Vec<String>,
    pub wse_images: Vec<String>,
    pub taudis_clusters: usize,
    pub wse_clusters: usize,
    pub candidates: usize,
    pub representatives: usize,
    pub coverage: Option<usize>,
}

/// Places each cluster on a circle and spreads its instances by projecting
/// their offset from the cluster mean onto two fixed random directions.
fn layout(sp: &SyntheticPool, seed: u64) -> BTreeMap<String, (f64, f64)> {
    let n = sp.truth.num_clusters;
    let dim = sp.pool.embedding_dim().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1ce);
    let dirs: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();

    let mut means = vec![vec![0.0; dim]; n];
    let mut counts = vec![0usize; n];
    for inst in sp.pool.images().flat_map(|i| &i.instances) {
        let c = sp.truth.cluster_of[&inst.instance_id];
        counts[c] += 1;
        means[c].iter_mut().zip(&inst.embedding).for_each(|(m, e)| *m += e);
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= c.max(1) as f64);
    }

    let mut out = BTreeMap::new();
    for inst in sp.pool.images().flat_map(|i| &i.instances) {
        let c = sp.truth.cluster_of[&inst.instance_id];
        let angle = std::f64::consts::TAU * c as f64 / n as f64;
        let offset = |d: &Vec<f64>| -> f64 {
            inst.embedding
                .iter()
                .zip(&means[c])
                .zip(d)
                .map(|((e, m), w)| (e - m) * w)
                .sum()
        };
        out.insert(
            inst.instance_id.clone(),
            (
                angle.cos() + 0.6 * offset(&dirs[0]),
                angle.sin() + 0.6 * offset(&dirs[1]),
            ),
        );
    }
    out
}

fn clusters_in(sp: &SyntheticPool, images: &[String]) -> usize {
    images
        .iter()
        .filter_map(|id| sp.pool.get(id))
        .flat_map(|img: &ImagePrediction| &img.instances)
        .map(|i| sp.truth.cluster_of[&i.instance_id])
        .collect::<BTreeSet<_>>()
        .len()
}

/// One round from an empty labeled set, with the two-step strategy and WSE side by side.
pub fn round_view(params: &PoolParams) -> Result<RoundView, String> {
    let sp = generate_pool(&params.spec()).map_err(|e| e.to_string())?;
    let state = PoolState::from_pool(&sp.pool, []);
    let images = unlabeled_images(&sp.pool, &state).map_err(|e| e.to_string())?;
    let cfg = params.selection(Strategy::Taudis);
    cfg.validate().map_err(|e| e.to_string())?;
    let trace = taudis_trace(&images, &cfg).map_err(|e| e.to_string())?;
    let wse = strategies::select(&sp.pool, &state, &params.selection(Strategy::Wse)).map_err(|e| e.to_string())?;

    let candidates: BTreeSet<&String> = trace.candidates.iter().collect();
    let reps: BTreeSet<&String> = trace.representatives.iter().collect();
    let taudis_imgs: BTreeSet<&String> = trace.output.selected_images.iter().collect();
    let wse_imgs: BTreeSet<&String> = wse.selected_images.iter().collect();
    let xy = layout(&sp, params.seed);

    let points = sp
        .pool
        .images()
        .flat_map(|img| &img.instances)
        .map(|inst| {
            let cluster = sp.truth.cluster_of[&inst.instance_id];
            let (x, y) = xy[&inst.instance_id];
            Point {
                instance_id: inst.instance_id.clone(),
                image_id: inst.image_id.clone(),
                cluster,
                hot: cluster < params.hot_clusters,
                x,
                y,
                se: inst.segmentation_entropy(),
                candidate: candidates.contains(&inst.instance_id),
                representative: reps.contains(&inst.instance_id),
                taudis: taudis_imgs.contains(&inst.image_id),
                wse: wse_imgs.contains(&inst.image_id),
            }
        })
        .collect();

    Ok(RoundView {
        points,
        num_clusters: sp.truth.num_clusters,
        taudis_clusters: clusters_in(&sp, &trace.output.selected_images),
        wse_clusters: clusters_in(&sp, &wse.selected_images),
        taudis_images: trace.output.selected_images.clone(),
        wse_images: wse.selected_images,
        candidates: trace.candidates.len(),
        representatives: trace.representatives.len(),
        coverage: trace.output.diagnostics.coverage,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Curve {
    pub strategy: String,
    pub cluster_coverage: Vec<f64>,
    pub mean_pool_uncertainty: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct SimulationParams {
    #[serde(flatten)]
    pub pool: PoolParams,
    pub rounds: usize,
    pub initial_fraction: f64,
    pub decay: f64,
    pub strategies: Vec<Strategy>,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            pool: PoolParams::default(),
            rounds: 8,
            initial_fraction: 0.0,
            decay: 0.5,
            strategies: vec![Strategy::Taudis, Strategy::Wse, Strategy::Random, Strategy::Coreset],
        }
    }
}

/// Per-strategy cluster coverage and leftover uncertainty, round by round.
pub fn coverage_curves(params: &SimulationParams) -> Result<Vec<Curve>, String> {
    let mut config = SimulationConfig::new(params.pool.selection(Strategy::Taudis), params.strategies.clone());
    config.rounds = Some(params.rounds.max(1));
    config.initial_labeled_fraction = params.initial_fraction;
    config.decay = params.decay;
    let report = run_simulation(&params.pool.spec(), &config).map_err(|e| e.to_string())?;
    Ok(report
        .runs
        .into_iter()
        .map(|run| Curve {
            strategy: run.strategy.name().to_owned(),
            cluster_coverage: run.metrics.iter().map(|m| m.cluster_coverage).collect(),
            mean_pool_uncertainty: run.metrics.iter().map(|m| m.mean_pool_uncertainty).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub sigma: f64,
    pub coverage: usize,
    pub universe_size: usize,
    pub representative_clusters: usize,
    pub selected_clusters: usize,
}

/// Representatives' cluster spread as the similarity threshold varies.
pub fn sigma_sweep(params: &PoolParams, sigmas: &[f64]) -> Result<Vec<SweepPoint>, String> {
    let sp = generate_pool(&params.spec()).map_err(|e| e.to_string())?;
    let state = PoolState::from_pool(&sp.pool, []);
    let images = unlabeled_images(&sp.pool, &state).map_err(|e| e.to_string())?;
    sigmas
        .iter()
        .map(|&sigma| {
            let mut cfg = params.selection(Strategy::Taudis);
            cfg.sigma = sigma;
            cfg.validate().map_err(|e| e.to_string())?;
            let trace = taudis_trace(&images, &cfg).map_err(|e| e.to_string())?;
            let d = &trace.output.diagnostics;
            Ok(SweepPoint {
                sigma,
                coverage: d.coverage.unwrap_or(0),
                universe_size: d.universe_size.unwrap_or(0),
                representative_clusters: trace
                    .representatives
                    .iter()
                    .map(|id| sp.truth.cluster_of[id])
                    .collect::<BTreeSet<_>>()
                    .len(),
                selected_clusters: clusters_in(&sp, &trace.output.selected_images),
            })
        })
        .collect()
}

fn parse<T: for<'de> Deserialize<'de> + Default>(json: &str) -> Result<T, JsValue> {
    if json.trim().is_empty() {
        return Ok(T::default());
    }
    serde_json::from_str(json).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn to_json<T: Serialize>(value: Result<T, String>) -> Result<String, JsValue> {
    let value = value.map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&value).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn select_round(params_json: &str) -> Result<String, JsValue> {
    let params: PoolParams = parse(params_json)?;
    to_json(round_view(&params))
}

#[wasm_bindgen]
pub fn simulate(params_json: &str) -> Result<String, JsValue> {
    let params: SimulationParams = parse(params_json)?;
    to_json(coverage_curves(&params))
}

#[wasm_bindgen(js_name = sigmaSweep)]
pub fn sigma_sweep_json(params_json: &str) -> Result<String, JsValue> {
    let params: PoolParams = parse(params_json)?;
    let sigmas: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
    to_json(sigma_sweep(&params, &sigmas))
}
