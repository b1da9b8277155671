//! Per-instance and per-image uncertainty score tables.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{ImagePrediction, Pool};
use crate::uncertainty::{
    average_classification_margin, classification_entropy, classification_margin, weighted_classification_entropy,
    weighted_segmentation_entropy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMetric {
    Cm,
    Ce,
    Se,
    AvgCm,
    Wce,
    Wse,
}

impl ScoreMetric {
    pub const ALL: [ScoreMetric; 6] = [
        ScoreMetric::Cm,
        ScoreMetric::Ce,
        ScoreMetric::Se,
        ScoreMetric::AvgCm,
        ScoreMetric::Wce,
        ScoreMetric::Wse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreMetric::Cm => "cm",
            ScoreMetric::Ce => "ce",
            ScoreMetric::Se => "se",
            ScoreMetric::AvgCm => "avg_cm",
            ScoreMetric::Wce => "wce",
            ScoreMetric::Wse => "wse",
        }
    }

    pub fn is_image_level(self) -> bool {
        matches!(self, ScoreMetric::AvgCm | ScoreMetric::Wce | ScoreMetric::Wse)
    }
}

impl FromStr for ScoreMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScoreMetric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric '{s}' (expected one of cm, ce, se, avg_cm, wce, wse)"))
    }
}

/// One row of the score table. Metrics that do not apply at the row's level,
/// or cannot be computed (a margin with a single class), are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub image_id: String,
    /// `None` for the image-level row.
    pub instance_id: Option<String>,
    pub values: Vec<Option<f64>>,
}

fn image_rows(image: &ImagePrediction, metrics: &[ScoreMetric]) -> Vec<ScoreRow> {
    let mut rows = Vec::with_capacity(image.instances.len() + 1);
    rows.push(ScoreRow {
        image_id: image.image_id.clone(),
        instance_id: None,
        values: metrics
            .iter()
            .map(|m| match m {
                ScoreMetric::AvgCm => average_classification_margin(image).ok().map(|s| s.value),
                ScoreMetric::Wce => Some(weighted_classification_entropy(image).value),
                ScoreMetric::Wse => Some(weighted_segmentation_entropy(image).value),
                _ => None,
            })
            .collect(),
    });
    for inst in &image.instances {
        rows.push(ScoreRow {
            image_id: image.image_id.clone(),
            instance_id: Some(inst.instance_id.clone()),
            values: metrics
                .iter()
                .map(|m| match m {
                    ScoreMetric::Cm => classification_margin(&inst.class_probs).ok().map(|s| s.value),
                    ScoreMetric::Ce => Some(classification_entropy(&inst.class_probs).value),
                    ScoreMetric::Se => Some(inst.segmentation_entropy()),
                    _ => None,
                })
                .collect(),
        });
    }
    rows
}

/// Each image's row followed by its instances' rows, images in id order.
pub fn score_rows(pool: &Pool, metrics: &[ScoreMetric]) -> Vec<ScoreRow> {
    let images: Vec<&ImagePrediction> = pool.images().collect();
    #[cfg(feature = "parallel")]
    let nested: Vec<Vec<ScoreRow>> = {
        use rayon::prelude::*;
        images.par_iter().map(|img| image_rows(img, metrics)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let nested: Vec<Vec<ScoreRow>> = images.iter().map(|img| image_rows(img, metrics)).collect();
    nested.into_iter().flatten().collect()
}

/// Writes the score table as CSV: `level,image_id,instance_id,<metrics...>`.
pub fn write_score_table<W: Write>(pool: &Pool, metrics: &[ScoreMetric], out: W) -> csv::Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["level", "image_id", "instance_id"];
    header.extend(metrics.iter().map(|m| m.name()));
    wtr.write_record(&header)?;
    for row in score_rows(pool, metrics) {
        let level = if row.instance_id.is_some() { "instance" } else { "image" };
        let mut rec = vec![level.to_owned(), row.image_id, row.instance_id.unwrap_or_default()];
        rec.extend(row.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
