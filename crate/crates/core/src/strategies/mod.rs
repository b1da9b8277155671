//! Image selection strategies behind a single entry point.
//!
//! Every strategy returns `min(B, |unlabeled|)` distinct unlabeled image ids
//! and is a pure function of the pool, the labeled/unlabeled split, and the
//! config (including its seed).

mod baselines;
mod taudis;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, CoverAlgorithm, SelectionConfig, Strategy};
use crate::maxcover::{self, CoverError, CoverProblem, CoverSolution};
use crate::model::{ImagePrediction, Pool, PoolState};
use crate::simgraph::SimilarityError;
use crate::uncertainty::MetricError;

pub use baselines::{coreset_select, random_select, round_robin_select, uncertainty_select, ImageMetric};
pub use taudis::{
    majority_vote, taudis_cover_problem, taudis_img_select, taudis_select, taudis_trace, TaudisTrace, Vote,
};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Cover(#[from] CoverError),
    #[error("no prediction for unlabeled image '{0}'")]
    MissingPrediction(String),
    #[error("no embedding available for image '{0}'")]
    MissingEmbedding(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub unlabeled: usize,
    /// Size of the uncertain candidate set (instances, or images for the
    /// image-level variant).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<usize>,
    /// Size of the diverse representative set picked by the cover step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub representatives: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub universe_size: Option<usize>,
    /// Representatives per image (`n_D`), for images with at least one.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub votes: BTreeMap<String, usize>,
    /// Images added by a fallback fill rule rather than the main criterion.
    pub filled: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyOutput {
    pub selected_images: Vec<String>,
    pub diagnostics: Diagnostics,
}

/// Runs the configured strategy for one round.
pub fn select(pool: &Pool, state: &PoolState, config: &SelectionConfig) -> Result<StrategyOutput, StrategyError> {
    config.validate()?;
    let images = unlabeled_images(pool, state)?;
    let mut out = match config.strategy {
        Strategy::Taudis => taudis_select(&images, config)?,
        Strategy::TaudisImg => taudis_img_select(&images, config)?,
        Strategy::Random => random_select(&images, config.budget, config.seed),
        Strategy::AvgCm => uncertainty_select(&images, ImageMetric::AvgCm, config.budget)?,
        Strategy::Wce => uncertainty_select(&images, ImageMetric::Wce, config.budget)?,
        Strategy::Wse => uncertainty_select(&images, ImageMetric::Wse, config.budget)?,
        Strategy::Coreset => {
            let labeled = labeled_images(pool, state)?;
            coreset_select(&labeled, &images, config.budget)?
        }
        Strategy::RoundRobin => round_robin_select(&images, pool.num_classes().unwrap_or(0), config.budget)?,
    };
    if config.budget > images.len() {
        out.diagnostics.warnings.push(format!(
            "budget {} exceeds the {} unlabeled images; selecting all of them",
            config.budget,
            images.len()
        ));
    }
    Ok(out)
}

/// Predictions of the unlabeled images, in id order.
pub fn unlabeled_images<'a>(pool: &'a Pool, state: &PoolState) -> Result<Vec<&'a ImagePrediction>, StrategyError> {
    state
        .unlabeled
        .iter()
        .map(|id| pool.get(id).ok_or_else(|| StrategyError::MissingPrediction(id.clone())))
        .collect()
}

fn labeled_images<'a>(pool: &'a Pool, state: &PoolState) -> Result<Vec<&'a ImagePrediction>, StrategyError> {
    state
        .labeled
        .iter()
        .map(|id| pool.get(id).ok_or_else(|| StrategyError::MissingEmbedding(id.clone())))
        .collect()
}

pub(crate) fn image_embedding(image: &ImagePrediction) -> Result<Vec<f64>, StrategyError> {
    image
        .image_embedding()
        .ok_or_else(|| StrategyError::MissingEmbedding(image.image_id.clone()))
}

/// Dispatches to the configured max-cover solver.
pub fn solve_cover(problem: &CoverProblem, k: usize, config: &SelectionConfig) -> Result<CoverSolution, CoverError> {
    match config.cover_algorithm {
        CoverAlgorithm::Greedy => Ok(maxcover::greedy_max_cover(problem, k)),
        CoverAlgorithm::Lazy => Ok(maxcover::lazy_greedy_max_cover(problem, k)),
        CoverAlgorithm::Partitioned => maxcover::partitioned_max_cover(problem, k, config.partitions, config.seed),
        CoverAlgorithm::Brute => maxcover::brute_force_max_cover(problem, k),
    }
}

/// Orders larger scores first. Scores are never NaN, and `-0.0` must tie with `0.0`.
pub(crate) fn descending(a: f64, b: f64) -> std::cmp::Ordering {
    b.partial_cmp(&a).unwrap_or(std::cmp::Ordering::Equal)
}

/// Sorts `(id, priority)` pairs by priority descending, then id ascending,
/// and keeps the first `n` ids.
pub(crate) fn top_by_priority(mut scored: Vec<(String, f64)>, n: usize) -> Vec<String> {
    scored.sort_by(|a, b| descending(a.1, b.1).then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().take(n).map(|(id, _)| id).collect()
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn pool() -> Pool {
        let imgs = (0..6)
            .map(|i| {
                let x = i as f64;
                image(
                    &format!("img{i}"),
                    vec![
                        instance(&format!("i{i}a"), &[0.6, 0.4], &[1.0, x], 0.1 + 0.05 * x, 0.1 * x),
                        instance(&format!("i{i}b"), &[0.3, 0.7], &[x, 1.0], 0.2, 0.6 - 0.1 * x),
                    ],
                )
            })
            .collect();
        Pool::new(imgs).unwrap()
    }

    #[test]
    fn every_strategy_respects_budget() {
        let pool = pool();
        let state = PoolState::from_pool(&pool, vec!["img0".to_string()]);
        for strategy in Strategy::ALL {
            for budget in [1, 3, 5, 9] {
                let mut cfg = SelectionConfig::new(strategy, budget);
                cfg.alpha = 3.0;
                cfg.beta = 2.0;
                let out = select(&pool, &state, &cfg).unwrap();
                let expected = budget.min(state.unlabeled.len());
                assert_eq!(out.selected_images.len(), expected, "{strategy} B={budget}");
                let mut uniq = out.selected_images.clone();
                uniq.sort();
                uniq.dedup();
                assert_eq!(uniq.len(), expected);
                assert!(uniq.iter().all(|id| state.unlabeled.contains(id)));
                assert_eq!(out.diagnostics.warnings.is_empty(), budget <= 5);
                // determinism
                assert_eq!(select(&pool, &state, &cfg).unwrap(), out);
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let pool = pool();
        let state = PoolState::from_pool(&pool, vec![]);
        let mut cfg = SelectionConfig::new(Strategy::Taudis, 2);
        cfg.alpha = 2.0;
        cfg.beta = 3.0;
        assert!(matches!(select(&pool, &state, &cfg), Err(StrategyError::Config(_))));
    }

    #[test]
    fn missing_prediction_reported() {
        let pool = pool();
        let state = PoolState::new(vec![], vec!["ghost".to_string()]).unwrap();
        let cfg = SelectionConfig::new(Strategy::Wse, 1);
        assert!(matches!(select(&pool, &state, &cfg), Err(StrategyError::MissingPrediction(id)) if id == "ghost"));
    }
}
