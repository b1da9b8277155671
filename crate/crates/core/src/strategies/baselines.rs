use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{image_embedding, top_by_priority, Diagnostics, StrategyError, StrategyOutput};
use crate::model::ImagePrediction;
use crate::uncertainty::{
    average_classification_margin, class_conditional_wse, weighted_classification_entropy,
    weighted_segmentation_entropy,
};

/// Image-level score used by the pure uncertainty baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageMetric {
    AvgCm,
    Wce,
    Wse,
}

fn plain(selected: Vec<String>, unlabeled: usize) -> StrategyOutput {
    StrategyOutput {
        selected_images: selected,
        diagnostics: Diagnostics {
            unlabeled,
            ..Default::default()
        },
    }
}

/// Uniform sample without replacement, seeded.
pub fn random_select(images: &[&ImagePrediction], budget: usize, seed: u64) -> StrategyOutput {
    let mut ids: Vec<String> = images.iter().map(|i| i.image_id.clone()).collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = budget.min(ids.len());
    let (picked, _) = ids.partial_shuffle(&mut rng, take);
    plain(picked.to_vec(), images.len())
}

/// Top `budget` images by an image-level uncertainty, in its uncertain
/// direction. Ties go to the smaller id.
pub fn uncertainty_select(
    images: &[&ImagePrediction],
    metric: ImageMetric,
    budget: usize,
) -> Result<StrategyOutput, StrategyError> {
    let mut scored = Vec::with_capacity(images.len());
    for img in images {
        let score = match metric {
            ImageMetric::AvgCm => average_classification_margin(img)?,
            ImageMetric::Wce => weighted_classification_entropy(img),
            ImageMetric::Wse => weighted_segmentation_entropy(img),
        };
        scored.push((img.image_id.clone(), score.priority()));
    }
    Ok(plain(top_by_priority(scored, budget), images.len()))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// k-center greedy over image embeddings: repeatedly take the unlabeled
/// image farthest from every labeled or already chosen image.
pub fn coreset_select(
    labeled: &[&ImagePrediction],
    unlabeled: &[&ImagePrediction],
    budget: usize,
) -> Result<StrategyOutput, StrategyError> {
    let mut points: Vec<(String, Vec<f64>)> = unlabeled
        .iter()
        .map(|img| Ok((img.image_id.clone(), image_embedding(img)?)))
        .collect::<Result<_, StrategyError>>()?;
    points.sort_by(|a, b| a.0.cmp(&b.0));
    let centers: Vec<Vec<f64>> = labeled
        .iter()
        .map(|img| image_embedding(img))
        .collect::<Result<_, _>>()?;

    let mut min_dist: Vec<f64> = points
        .iter()
        .map(|(_, p)| centers.iter().map(|c| euclidean(p, c)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut taken = vec![false; points.len()];
    let mut selected = Vec::with_capacity(budget.min(points.len()));

    while selected.len() < budget.min(points.len()) {
        // With no centers every distance is infinite and the first (smallest) id wins.
        let mut best: Option<usize> = None;
        for (i, d) in min_dist.iter().enumerate() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| *d > min_dist[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("an untaken point remains");
        taken[b] = true;
        selected.push(points[b].0.clone());
        let center = points[b].1.clone();
        for (i, (_, p)) in points.iter().enumerate() {
            min_dist[i] = min_dist[i].min(euclidean(p, &center));
        }
    }
    Ok(plain(selected, unlabeled.len()))
}

/// Cycles through classes in ascending index. On its turn a class takes its
/// highest-ranked unselected image by class-conditional WSE, provided that
/// score is positive. If a full cycle adds nothing, the remainder is filled
/// by overall WSE.
pub fn round_robin_select(
    images: &[&ImagePrediction],
    num_classes: usize,
    budget: usize,
) -> Result<StrategyOutput, StrategyError> {
    let target = budget.min(images.len());
    let mut rankings: Vec<Vec<String>> = Vec::with_capacity(num_classes);
    for k in 0..num_classes {
        let mut scored = Vec::new();
        for img in images {
            let v = class_conditional_wse(img, k, num_classes)?.value;
            if v > 0.0 {
                scored.push((img.image_id.clone(), v));
            }
        }
        rankings.push(top_by_priority(scored, usize::MAX));
    }

    let mut chosen: BTreeSet<String> = BTreeSet::new();
    let mut selected = Vec::with_capacity(target);
    let mut cursors = vec![0usize; num_classes];
    'cycle: while selected.len() < target {
        let mut added = false;
        for k in 0..num_classes {
            if selected.len() >= target {
                break 'cycle;
            }
            let ranking = &rankings[k];
            while cursors[k] < ranking.len() && chosen.contains(&ranking[cursors[k]]) {
                cursors[k] += 1;
            }
            if let Some(id) = ranking.get(cursors[k]) {
                chosen.insert(id.clone());
                selected.push(id.clone());
                added = true;
            }
        }
        if !added {
            break;
        }
    }

    let mut filled = 0;
    if selected.len() < target {
        let rest: Vec<(String, f64)> = images
            .iter()
            .filter(|img| !chosen.contains(&img.image_id))
            .map(|img| (img.image_id.clone(), weighted_segmentation_entropy(img).value))
            .collect();
        let fill = top_by_priority(rest, target - selected.len());
        filled = fill.len();
        selected.extend(fill);
    }
    let mut out = plain(selected, images.len());
    out.diagnostics.filled = filled;
    Ok(out)
}
