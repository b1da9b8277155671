//! Two-step selection: rank instances by uncertainty, keep a diverse subset
//! through max cover, then vote images in by how many representatives they hold.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{descending, image_embedding, solve_cover, top_by_priority, Diagnostics, StrategyError, StrategyOutput};
use crate::config::{InstanceMetric, SelectionConfig};
use crate::maxcover::CoverProblem;
use crate::model::{ImagePrediction, InstancePrediction};
use crate::simgraph::{build_similarity_matrix, to_cover_problem, Embedded};
use crate::uncertainty::{self, weighted_segmentation_entropy};

/// Intermediate sets from one instance-level round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaudisTrace {
    /// Uncertain candidates, most uncertain first.
    pub candidates: Vec<String>,
    /// Representatives in the order the cover step picked them.
    pub representatives: Vec<String>,
    pub output: StrategyOutput,
}

fn instance_priority(inst: &InstancePrediction, metric: InstanceMetric) -> Result<f64, StrategyError> {
    Ok(match metric {
        InstanceMetric::Se => inst.segmentation_entropy(),
        InstanceMetric::Ce => uncertainty::classification_entropy(&inst.class_probs).value,
        InstanceMetric::Cm => uncertainty::classification_margin(&inst.class_probs)?.priority(),
    })
}

/// Uncertain candidates, most uncertain first, and the cover problem they
/// induce over every instance of `images`.
pub fn taudis_cover_problem<'a>(
    images: &[&'a ImagePrediction],
    config: &SelectionConfig,
) -> Result<(Vec<&'a InstancePrediction>, CoverProblem), StrategyError> {
    let all: Vec<&InstancePrediction> = images.iter().flat_map(|img| &img.instances).collect();

    let mut ranked = Vec::with_capacity(all.len());
    for inst in &all {
        ranked.push((*inst, instance_priority(inst, config.metric)?));
    }
    ranked.sort_by(|a, b| descending(a.1, b.1).then_with(|| a.0.instance_id.cmp(&b.0.instance_id)));
    ranked.truncate(config.candidate_count());
    let candidates: Vec<&InstancePrediction> = ranked.into_iter().map(|(i, _)| i).collect();

    fn embed<'a>(i: &&'a InstancePrediction) -> Embedded<'a> {
        Embedded::new(&i.instance_id, &i.embedding)
    }
    let rows: Vec<Embedded<'_>> = candidates.iter().map(embed).collect();
    let universe: Vec<Embedded<'_>> = all.iter().map(embed).collect();
    let matrix = build_similarity_matrix(&rows, &universe, config.sigma)?;
    Ok((candidates, to_cover_problem(&matrix)))
}

pub fn taudis_trace(images: &[&ImagePrediction], config: &SelectionConfig) -> Result<TaudisTrace, StrategyError> {
    let (candidates, problem) = taudis_cover_problem(images, config)?;
    let solution = solve_cover(&problem, config.representative_count(), config)?;
    let representatives: Vec<&InstancePrediction> = solution.ranks.iter().map(|&r| candidates[r]).collect();

    let (selected, votes, filled) = majority_vote(&representatives, config.budget, images);
    let output = StrategyOutput {
        selected_images: selected,
        diagnostics: Diagnostics {
            unlabeled: images.len(),
            candidates: Some(candidates.len()),
            representatives: Some(representatives.len()),
            coverage: Some(solution.coverage),
            universe_size: Some(problem.universe_size()),
            votes: votes.into_iter().map(|(id, v)| (id, v.count)).collect(),
            filled,
            warnings: Vec::new(),
        },
    };
    Ok(TaudisTrace {
        candidates: candidates.iter().map(|i| i.instance_id.clone()).collect(),
        representatives: solution.selected,
        output,
    })
}

/// Instance-level uncertainty, then diversity, then majority vote.
pub fn taudis_select(images: &[&ImagePrediction], config: &SelectionConfig) -> Result<StrategyOutput, StrategyError> {
    Ok(taudis_trace(images, config)?.output)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Vote {
    pub count: usize,
    pub summed_se: f64,
}

/// Ranks images by their number of representatives (ties: larger summed SE
/// of those representatives, then smaller id) and takes the top `budget`.
/// When too few images hold a representative, the rest are filled by
/// image-level WSE among the untouched images.
///
/// Returns the selection, the per-image votes and the number of fills.
pub fn majority_vote(
    representatives: &[&InstancePrediction],
    budget: usize,
    images: &[&ImagePrediction],
) -> (Vec<String>, BTreeMap<String, Vote>, usize) {
    let mut votes: BTreeMap<String, Vote> = BTreeMap::new();
    for inst in representatives {
        let v = votes.entry(inst.image_id.clone()).or_default();
        v.count += 1;
        v.summed_se += inst.segmentation_entropy();
    }
    let mut ranked: Vec<(&String, &Vote)> = votes.iter().collect();
    ranked.sort_by(|a, b| {
        b.1.count
            .cmp(&a.1.count)
            .then_with(|| descending(a.1.summed_se, b.1.summed_se))
            .then_with(|| a.0.cmp(b.0))
    });
    let mut selected: Vec<String> = ranked.into_iter().take(budget).map(|(id, _)| id.clone()).collect();

    let mut filled = 0;
    if selected.len() < budget {
        let rest: Vec<(String, f64)> = images
            .iter()
            .filter(|img| !votes.contains_key(&img.image_id))
            .map(|img| (img.image_id.clone(), weighted_segmentation_entropy(img).value))
            .collect();
        let fill = top_by_priority(rest, budget - selected.len());
        filled = fill.len();
        selected.extend(fill);
    }
    (selected, votes, filled)
}

/// Image-level variant: top `alpha * B` images by WSE, then max cover over
/// image embeddings with `k = B`.
pub fn taudis_img_select(
    images: &[&ImagePrediction],
    config: &SelectionConfig,
) -> Result<StrategyOutput, StrategyError> {
    let scored: Vec<(String, f64)> = images
        .iter()
        .map(|img| (img.image_id.clone(), weighted_segmentation_entropy(img).value))
        .collect();
    let candidate_ids = top_by_priority(scored, config.candidate_count());

    let embeddings: Vec<(String, Vec<f64>)> = images
        .iter()
        .map(|img| Ok((img.image_id.clone(), image_embedding(img)?)))
        .collect::<Result<_, StrategyError>>()?;
    let by_id: BTreeMap<&str, &[f64]> = embeddings.iter().map(|(id, e)| (id.as_str(), e.as_slice())).collect();
    let rows: Vec<Embedded<'_>> = candidate_ids
        .iter()
        .map(|id| Embedded::new(id, by_id[id.as_str()]))
        .collect();
    let universe: Vec<Embedded<'_>> = embeddings.iter().map(|(id, e)| Embedded::new(id, e)).collect();

    let matrix = build_similarity_matrix(&rows, &universe, config.sigma)?;
    let problem = to_cover_problem(&matrix);
    let solution = solve_cover(&problem, config.budget, config)?;
    Ok(StrategyOutput {
        diagnostics: Diagnostics {
            unlabeled: images.len(),
            candidates: Some(candidate_ids.len()),
            representatives: Some(solution.selected.len()),
            coverage: Some(solution.coverage),
            universe_size: Some(problem.universe_size()),
            ..Default::default()
        },
        selected_images: solution.selected,
    })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;
    use crate::config::Strategy;
    use crate::maxcover::{brute_force_max_cover, CoverProblem};
    use crate::model::Pool;

    fn cfg(budget: usize, alpha: f64, beta: f64, sigma: f64) -> SelectionConfig {
        let mut c = SelectionConfig::new(Strategy::Taudis, budget);
        c.alpha = alpha;
        c.beta = beta;
        c.sigma = sigma;
        c
    }

    fn unit(angle_deg: f64) -> [f64; 2] {
        let a = angle_deg.to_radians();
        [a.cos(), a.sin()]
    }

    #[test]
    fn image_holding_top_dissimilar_instances_wins() {
        // img-hot carries 10 high-SE instances spread around the circle.
        let hot: Vec<_> = (0..10)
            .map(|i| {
                instance(
                    &format!("h{i}"),
                    &[0.5, 0.5],
                    &unit(36.0 * i as f64),
                    0.05,
                    0.6 + 0.001 * i as f64,
                )
            })
            .collect();
        let mut imgs = vec![image("img-hot", hot)];
        for j in 0..5 {
            imgs.push(image(
                &format!("img-{j}"),
                vec![instance(
                    &format!("c{j}"),
                    &[0.9, 0.1],
                    &unit(5.0 + 36.0 * j as f64),
                    0.5,
                    0.1,
                )],
            ));
        }
        let pool = Pool::new(imgs).unwrap();
        let refs: Vec<_> = pool.images().collect();
        let out = taudis_select(&refs, &cfg(1, 10.0, 5.0, 0.8)).unwrap();
        assert_eq!(out.selected_images, vec!["img-hot"]);
    }

    #[test]
    fn identical_embeddings_reduce_to_uncertainty_order() {
        let imgs: Vec<_> = (0..5)
            .map(|i| {
                image(
                    &format!("img{i}"),
                    vec![instance(
                        &format!("t{i}"),
                        &[0.5, 0.5],
                        &[1.0, 1.0],
                        0.2,
                        0.1 * (i + 1) as f64,
                    )],
                )
            })
            .collect();
        let pool = Pool::new(imgs).unwrap();
        let refs: Vec<_> = pool.images().collect();
        let trace = taudis_trace(&refs, &cfg(2, 2.5, 1.5, 0.8)).unwrap();
        assert_eq!(trace.candidates, vec!["t4", "t3", "t2", "t1", "t0"]);
        // One representative covers everything; the rest is rank padding.
        assert_eq!(trace.representatives, vec!["t4", "t3", "t2"]);
        assert_eq!(trace.output.diagnostics.coverage, Some(5));
        assert_eq!(trace.output.selected_images, vec!["img4", "img3"]);
    }

    #[test]
    fn planted_clusters_yield_one_per_cluster() {
        // 4 clusters of 2 candidates each at 0, 90, 180, 270 degrees; every
        // cluster also owns two low-uncertainty universe instances.
        let mut imgs = Vec::new();
        let mut n = 0;
        for c in 0..4 {
            let base = 90.0 * c as f64;
            for j in 0..2 {
                let se = 0.6 - 0.01 * n as f64;
                imgs.push(image(
                    &format!("img-c{c}-{j}"),
                    vec![
                        instance(&format!("u{c}{j}"), &[0.5, 0.5], &unit(base + 3.0 * j as f64), 0.1, se),
                        instance(
                            &format!("q{c}{j}"),
                            &[0.9, 0.1],
                            &unit(base - 4.0 * j as f64 - 1.0),
                            0.1,
                            0.01,
                        ),
                    ],
                ));
                n += 1;
            }
        }
        let pool = Pool::new(imgs).unwrap();
        let refs: Vec<_> = pool.images().collect();
        let config = cfg(2, 4.0, 2.0, 0.8);
        let trace = taudis_trace(&refs, &config).unwrap();
        assert_eq!(trace.candidates.len(), 8);
        let clusters: std::collections::BTreeSet<char> = trace
            .representatives
            .iter()
            .map(|id| id.chars().nth(1).unwrap())
            .collect();
        assert_eq!(clusters.len(), 4, "{:?}", trace.representatives);

        // Oracle: exhaustive cover over the same 8-candidate problem.
        let named: Vec<(String, Vec<String>)> = trace
            .candidates
            .iter()
            .map(|c| {
                let cl = c.chars().nth(1).unwrap();
                let members = pool
                    .images()
                    .flat_map(|i| &i.instances)
                    .filter(|i| i.instance_id.chars().nth(1) == Some(cl))
                    .map(|i| i.instance_id.clone())
                    .collect();
                (c.clone(), members)
            })
            .collect();
        let oracle = brute_force_max_cover(&CoverProblem::from_named(named).unwrap(), 4).unwrap();
        assert_eq!(trace.output.diagnostics.coverage, Some(oracle.coverage));
        assert_eq!(oracle.coverage, 16);
    }

    fn se_inst(id: &str, image_id: &str, se: f64) -> InstancePrediction {
        let mut i = instance(id, &[1.0], &[1.0], 1.0, se);
        i.image_id = image_id.into();
        i
    }

    #[test]
    fn vote_majority_wins() {
        let reps = [
            se_inst("a", "img1", 0.1),
            se_inst("b", "img1", 0.1),
            se_inst("c", "img1", 0.1),
            se_inst("d", "img2", 0.6),
        ];
        let refs: Vec<_> = reps.iter().collect();
        let (sel, votes, filled) = majority_vote(&refs, 1, &[]);
        assert_eq!(sel, vec!["img1"]);
        assert_eq!(votes["img1"].count, 3);
        assert_eq!(filled, 0);
    }

    #[test]
    fn vote_tie_goes_to_smaller_id() {
        let reps = [
            se_inst("a", "img2", 0.3),
            se_inst("b", "img2", 0.3),
            se_inst("c", "img1", 0.3),
            se_inst("d", "img1", 0.3),
        ];
        let refs: Vec<_> = reps.iter().collect();
        assert_eq!(majority_vote(&refs, 1, &[]).0, vec!["img1"]);
        // summed SE decides before the id
        let reps = [
            se_inst("a", "img2", 0.4),
            se_inst("b", "img2", 0.3),
            se_inst("c", "img1", 0.3),
            se_inst("d", "img1", 0.3),
        ];
        let refs: Vec<_> = reps.iter().collect();
        assert_eq!(majority_vote(&refs, 1, &[]).0, vec!["img2"]);
    }

    #[test]
    fn vote_shortfall_filled_by_wse() {
        // WSE of the untouched images: u3 = 0.5*0.4 = 0.20, u4 = 0.3*0.5 = 0.15,
        // u5 = 1.0*0.1 = 0.10. Hand ranking: u3, u4, u5.
        let mk = |id: &str, s: f64, se: f64| image(id, vec![instance(&format!("{id}-x"), &[1.0], &[1.0], s, se)]);
        let imgs = vec![
            mk("u1", 0.1, 0.01),
            mk("u2", 0.1, 0.01),
            mk("u3", 0.5, 0.4),
            mk("u4", 0.3, 0.5),
            mk("u5", 1.0, 0.1),
        ];
        let pool = Pool::new(imgs).unwrap();
        let refs: Vec<_> = pool.images().collect();
        let reps = [se_inst("u1-x", "u1", 0.01), se_inst("u2-x", "u2", 0.01)];
        let rep_refs: Vec<_> = reps.iter().collect();
        let (sel, _, filled) = majority_vote(&rep_refs, 4, &refs);
        assert_eq!(sel, vec!["u1", "u2", "u3", "u4"]);
        assert_eq!(filled, 2);
    }

    #[test]
    fn img_variant_single_outlier() {
        let mut imgs = vec![image_with_embedding("star", &[1.0, 0.0])];
        imgs[0].instances[0].seg_entropy = Some(0.69);
        imgs[0].instances[0].size_ratio = 1.0;
        for i in 0..4 {
            imgs.push(image_with_embedding(&format!("o{i}"), &unit(90.0 + 70.0 * i as f64)));
        }
        let pool = Pool::new(imgs).unwrap();
        let refs: Vec<_> = pool.images().collect();
        let out = taudis_img_select(&refs, &cfg(1, 3.0, 2.0, 0.8)).unwrap();
        assert_eq!(out.selected_images, vec!["star"]);
    }

    #[test]
    fn img_variant_identical_embeddings_follow_wse() {
        let imgs: Vec<_> = (0..4)
            .map(|i| {
                let mut img = image_with_embedding(&format!("m{i}"), &[1.0, 1.0]);
                img.instances[0].seg_entropy = Some(0.1 * (4 - i) as f64);
                img
            })
            .collect();
        let pool = Pool::new(imgs).unwrap();
        let refs: Vec<_> = pool.images().collect();
        let out = taudis_img_select(&refs, &cfg(2, 2.0, 1.5, 0.8)).unwrap();
        assert_eq!(out.selected_images, vec!["m0", "m1"]);
    }

    #[test]
    fn img_variant_spreads_across_clusters() {
        // Three clusters of two images. Top-4 by WSE are a0, a1, b0, c0;
        // with B = 2 the brute-force optimum picks two different clusters.
        let specs = [
            ("a0", 0.0, 0.60),
            ("a1", 2.0, 0.55),
            ("b0", 120.0, 0.50),
            ("b1", 122.0, 0.10),
            ("c0", 240.0, 0.45),
            ("c1", 242.0, 0.05),
        ];
        let imgs: Vec<_> = specs
            .iter()
            .map(|(id, deg, se)| {
                let mut img = image_with_embedding(id, &unit(*deg));
                img.instances[0].seg_entropy = Some(*se);
                img
            })
            .collect();
        let pool = Pool::new(imgs).unwrap();
        let refs: Vec<_> = pool.images().collect();
        let out = taudis_img_select(&refs, &cfg(2, 2.0, 1.5, 0.8)).unwrap();
        let clusters: std::collections::BTreeSet<_> = out.selected_images.iter().map(|s| &s[..1]).collect();
        assert_eq!(clusters.len(), 2);
        let oracle = brute_force_max_cover(
            &CoverProblem::from_named(vec![
                ("a0", vec!["a0", "a1"]),
                ("a1", vec!["a0", "a1"]),
                ("b0", vec!["b0", "b1"]),
                ("c0", vec!["c0", "c1"]),
            ])
            .unwrap(),
            2,
        )
        .unwrap();
        assert_eq!(out.diagnostics.coverage, Some(oracle.coverage));
        assert_eq!(out.selected_images, vec!["a0", "b0"]);
    }

    #[test]
    fn img_variant_needs_embeddings() {
        let pool = Pool::new(vec![image("empty", vec![])]).unwrap();
        let refs: Vec<_> = pool.images().collect();
        assert!(matches!(
            taudis_img_select(&refs, &cfg(1, 2.0, 1.5, 0.8)),
            Err(StrategyError::MissingEmbedding(id)) if id == "empty"
        ));
    }
}
