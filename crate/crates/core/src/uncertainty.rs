//! Instance- and image-level uncertainty scores.
//!
//! All entropies are in nats. Margins are probability differences in `[0, 1]`
//! where a small value means the model is unsure.

use serde::Serialize;
use thiserror::Error;

use crate::model::{ImagePrediction, Mask};

/// Mask probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    LowerIsUncertain,
    HigherIsUncertain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UncertaintyScore {
    pub value: f64,
    pub orientation: Orientation,
}

impl UncertaintyScore {
    fn higher(value: f64) -> Self {
        UncertaintyScore {
            value,
            orientation: Orientation::HigherIsUncertain,
        }
    }

    fn lower(value: f64) -> Self {
        UncertaintyScore {
            value,
            orientation: Orientation::LowerIsUncertain,
        }
    }

    /// Value mapped so that larger always means more uncertain.
    pub fn priority(&self) -> f64 {
        match self.orientation {
            Orientation::HigherIsUncertain => self.value,
            Orientation::LowerIsUncertain => -self.value,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("classification margin needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("mask has no pixels")]
    EmptyMask,
    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
}

/// `((c1, p1), (c2, p2))`: the two most probable classes. Ties go to the
/// lower index. With a single class the runner-up is `(0, 0.0)`.
pub(crate) fn top_two(probs: &[f64]) -> ((usize, f64), (usize, f64)) {
    let mut first = (0usize, f64::NEG_INFINITY);
    let mut second = (0usize, f64::NEG_INFINITY);
    for (i, &p) in probs.iter().enumerate() {
        if p > first.1 {
            second = first;
            first = (i, p);
        } else if p > second.1 {
            second = (i, p);
        }
    }
    if second.1 == f64::NEG_INFINITY {
        second = (0, 0.0);
    }
    (first, second)
}

pub fn classification_margin(class_probs: &[f64]) -> Result<UncertaintyScore, MetricError> {
    if class_probs.len() < 2 {
        return Err(MetricError::TooFewClasses(class_probs.len()));
    }
    let ((_, p1), (_, p2)) = top_two(class_probs);
    Ok(UncertaintyScore::lower((p1 - p2).clamp(0.0, 1.0)))
}

pub fn classification_entropy(class_probs: &[f64]) -> UncertaintyScore {
    let h: f64 = class_probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    UncertaintyScore::higher(h.max(0.0))
}

/// Binary entropy of a single sigmoid output. Exact 0 and 1 contribute 0.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    let p = p.clamp(EPS, 1.0 - EPS);
    -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
}

/// Mean per-pixel binary entropy of the winning-class mask.
pub fn segmentation_entropy(mask: &Mask) -> Result<UncertaintyScore, MetricError> {
    if mask.values.is_empty() {
        return Err(MetricError::EmptyMask);
    }
    let total: f64 = mask.values.iter().map(|&p| binary_entropy(p)).sum();
    let mean = total / mask.values.len() as f64;
    Ok(UncertaintyScore::higher(mean.min(std::f64::consts::LN_2)))
}

pub fn weighted_classification_entropy(image: &ImagePrediction) -> UncertaintyScore {
    let v = image
        .instances
        .iter()
        .map(|i| i.size_ratio * classification_entropy(&i.class_probs).value)
        .sum();
    UncertaintyScore::higher(v)
}

pub fn weighted_segmentation_entropy(image: &ImagePrediction) -> UncertaintyScore {
    let v = image
        .instances
        .iter()
        .map(|i| i.size_ratio * i.segmentation_entropy())
        .sum();
    UncertaintyScore::higher(v)
}

/// Mean instance margin. An image with no detections scores 1.0.
pub fn average_classification_margin(image: &ImagePrediction) -> Result<UncertaintyScore, MetricError> {
    if image.instances.is_empty() {
        return Ok(UncertaintyScore::lower(1.0));
    }
    let mut total = 0.0;
    for inst in &image.instances {
        total += classification_margin(&inst.class_probs)?.value;
    }
    Ok(UncertaintyScore::lower(total / image.instances.len() as f64))
}

/// WSE restricted to instances whose winning class is `class_k`.
pub fn class_conditional_wse(
    image: &ImagePrediction,
    class_k: usize,
    num_classes: usize,
) -> Result<UncertaintyScore, MetricError> {
    if class_k >= num_classes {
        return Err(MetricError::ClassOutOfRange {
            class: class_k,
            num_classes,
        });
    }
    let v = image
        .instances
        .iter()
        .filter(|i| i.winning_class() == class_k)
        .map(|i| i.size_ratio * i.segmentation_entropy())
        .sum();
    Ok(UncertaintyScore::higher(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InstancePrediction;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn inst(id: &str, probs: Vec<f64>, size: f64, se: f64) -> InstancePrediction {
        InstancePrediction {
            instance_id: id.into(),
            image_id: String::new(),
            class_probs: probs,
            embedding: vec![1.0],
            size_ratio: size,
            mask: None,
            seg_entropy: Some(se),
        }
    }

    #[test]
    fn margin_examples() {
        assert_abs_diff_eq!(
            classification_margin(&[0.7, 0.2, 0.1]).unwrap().value,
            0.5,
            epsilon = 1e-12
        );
        assert_eq!(classification_margin(&[1.0, 0.0, 0.0]).unwrap().value, 1.0);
        let third = 1.0 / 3.0;
        assert_eq!(classification_margin(&[third, third, third]).unwrap().value, 0.0);
        assert_eq!(classification_margin(&[1.0]), Err(MetricError::TooFewClasses(1)));
        assert_eq!(
            classification_margin(&[0.2]).unwrap_err(),
            MetricError::TooFewClasses(1)
        );
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(classification_entropy(&[0.25; 4]).value, 4f64.ln(), epsilon = 1e-12);
        assert_eq!(classification_entropy(&[1.0, 0.0, 0.0]).value, 0.0);
        assert_abs_diff_eq!(classification_entropy(&[0.5, 0.5, 0.0]).value, LN_2, epsilon = 1e-12);
    }

    #[test]
    fn seg_entropy_examples() {
        let half = Mask::constant(3, 4, 0.5);
        assert_abs_diff_eq!(segmentation_entropy(&half).unwrap().value, LN_2, epsilon = 1e-12);
        let hard = Mask {
            w: 2,
            h: 2,
            values: vec![0.0, 1.0, 1.0, 0.0],
        };
        assert_eq!(segmentation_entropy(&hard).unwrap().value, 0.0);
        let mixed = Mask {
            w: 2,
            h: 1,
            values: vec![0.5, 1.0],
        };
        assert_abs_diff_eq!(segmentation_entropy(&mixed).unwrap().value, LN_2 / 2.0, epsilon = 1e-12);
        let empty = Mask {
            w: 0,
            h: 0,
            values: vec![],
        };
        assert_eq!(segmentation_entropy(&empty), Err(MetricError::EmptyMask));
    }

    /// Two-class distribution whose entropy is `h` nats (bisection on [0, 0.5]).
    fn probs_with_entropy(h: f64) -> Vec<f64> {
        let (mut lo, mut hi) = (0.0f64, 0.5f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if binary_entropy(mid) < h {
                lo = mid
            } else {
                hi = mid
            }
        }
        let p = 0.5 * (lo + hi);
        vec![1.0 - p, p]
    }

    #[test]
    fn wce_examples() {
        let img = ImagePrediction::new(
            "y",
            vec![
                inst("b", probs_with_entropy(0.2), 0.1, 0.0),
                inst("c", probs_with_entropy(0.5), 0.3, 0.0),
            ],
        );
        assert_abs_diff_eq!(weighted_classification_entropy(&img).value, 0.17, epsilon = 1e-12);
        assert_eq!(
            weighted_classification_entropy(&ImagePrediction::new("e", vec![])).value,
            0.0
        );
        let a = inst("a", vec![0.5, 0.5], 1.0, 0.0);
        let img = ImagePrediction::new("x", vec![a]);
        assert_abs_diff_eq!(weighted_classification_entropy(&img).value, LN_2, epsilon = 1e-12);
    }

    #[test]
    fn wse_examples() {
        let img = ImagePrediction::new(
            "x",
            vec![
                inst("a", vec![1.0, 0.0], 0.2, LN_2),
                inst("b", vec![0.0, 1.0], 0.5, 0.0),
            ],
        );
        assert_abs_diff_eq!(weighted_segmentation_entropy(&img).value, 0.2 * LN_2, epsilon = 1e-12);
        assert_eq!(
            weighted_segmentation_entropy(&ImagePrediction::new("e", vec![])).value,
            0.0
        );

        let mut masked = inst("m", vec![1.0, 0.0], 1.0, 0.0);
        masked.seg_entropy = None;
        masked.mask = Some(Mask::constant(4, 4, 0.5));
        let img = ImagePrediction::new("y", vec![masked]);
        assert_abs_diff_eq!(weighted_segmentation_entropy(&img).value, LN_2, epsilon = 1e-12);
    }

    #[test]
    fn avg_margin_examples() {
        let img = ImagePrediction::new(
            "x",
            vec![
                inst("a", vec![0.75, 0.25], 0.1, 0.0),
                inst("b", vec![0.55, 0.45], 0.1, 0.0),
            ],
        );
        assert_abs_diff_eq!(average_classification_margin(&img).unwrap().value, 0.3, epsilon = 1e-12);
        let empty = ImagePrediction::new("e", vec![]);
        assert_eq!(average_classification_margin(&empty).unwrap().value, 1.0);
        let onehot = ImagePrediction::new("o", vec![inst("c", vec![0.0, 1.0, 0.0], 0.1, 0.0)]);
        assert_eq!(average_classification_margin(&onehot).unwrap().value, 1.0);
    }

    #[test]
    fn class_conditional_examples() {
        let img = ImagePrediction::new(
            "x",
            vec![inst("a", vec![0.9, 0.1], 0.2, 0.4), inst("b", vec![0.3, 0.7], 0.5, 0.6)],
        );
        assert_abs_diff_eq!(
            class_conditional_wse(&img, 0, 2).unwrap().value,
            0.2 * 0.4,
            epsilon = 1e-15
        );
        let single = ImagePrediction::new("y", vec![inst("c", vec![0.9, 0.1], 0.2, 0.4)]);
        assert_eq!(class_conditional_wse(&single, 1, 2).unwrap().value, 0.0);
        let same = ImagePrediction::new(
            "z",
            vec![inst("d", vec![0.9, 0.1], 0.2, 0.4), inst("e", vec![0.8, 0.2], 0.3, 0.1)],
        );
        assert_eq!(
            class_conditional_wse(&same, 0, 2).unwrap().value,
            weighted_segmentation_entropy(&same).value
        );
        assert!(class_conditional_wse(&img, 2, 2).is_err());
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(top_two(&[0.4, 0.4, 0.2]).0 .0, 0);
        assert_eq!(top_two(&[0.2, 0.4, 0.4]), ((1, 0.4), (2, 0.4)));
    }

    fn prob_vector() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 2..12).prop_filter_map("nonzero mass", |raw| {
            let s: f64 = raw.iter().sum();
            (s > 1e-6).then(|| raw.iter().map(|v| v / s).collect())
        })
    }

    proptest! {
        #[test]
        fn scores_stay_in_bounds(p in prob_vector(), mask in prop::collection::vec(0.0f64..=1.0, 1..64)) {
            let k = p.len() as f64;
            let cm = classification_margin(&p).unwrap().value;
            let ce = classification_entropy(&p).value;
            prop_assert!((0.0..=1.0).contains(&cm));
            prop_assert!(ce >= 0.0 && ce <= k.ln() + 1e-12);
            let n = mask.len();
            let se = segmentation_entropy(&Mask { w: n, h: 1, values: mask }).unwrap().value;
            prop_assert!(se >= 0.0 && se <= LN_2);
        }

        #[test]
        fn permutation_invariant(p in prob_vector(), shift in 0usize..12) {
            let mut q = p.clone();
            q.rotate_left(shift % p.len());
            q.reverse();
            prop_assert!((classification_entropy(&p).value - classification_entropy(&q).value).abs() < 1e-12);
            prop_assert_eq!(classification_margin(&p).unwrap().value, classification_margin(&q).unwrap().value);
        }

        #[test]
        fn replacing_pixel_with_half_never_lowers(mask in prop::collection::vec(0.0f64..=1.0, 1..64), idx in 0usize..64) {
            let n = mask.len();
            let before = segmentation_entropy(&Mask { w: n, h: 1, values: mask.clone() }).unwrap().value;
            let mut after = mask;
            after[idx % n] = 0.5;
            let after = segmentation_entropy(&Mask { w: n, h: 1, values: after }).unwrap().value;
            prop_assert!(after >= before - 1e-15);
        }

        #[test]
        fn class_conditional_parts_sum_to_wse(
            rows in prop::collection::vec((prob_vector(), 0.01f64..1.0, 0.0f64..0.69), 0..8)
        ) {
            let k = 12;
            let instances: Vec<_> = rows.into_iter().enumerate().map(|(i, (mut p, s, se))| {
                p.resize(k, 0.0);
                inst(&i.to_string(), p, s, se)
            }).collect();
            let img = ImagePrediction::new("x", instances);
            let parts: f64 = (0..k).map(|c| class_conditional_wse(&img, c, k).unwrap().value).sum();
            prop_assert!((parts - weighted_segmentation_entropy(&img).value).abs() < 1e-12);
        }
    }
}
