//! Prediction records, the image pool, and labeled/unlabeled bookkeeping.
//!
//! Predictions arrive as JSON Lines, one image per line. Every record is
//! checked against the pool invariants before a [`Pool`] is handed out; once
//! built the pool is immutable and can be shared freely between strategies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::uncertainty;

/// Tolerance on `sum(class_probs) == 1`.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Allowed disagreement between a dense mask and a precomputed `seg_entropy`.
pub const SEG_ENTROPY_TOLERANCE: f64 = 1e-6;

/// Dense winning-class mask of sigmoid probabilities, row-major `h` rows of `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub w: usize,
    pub h: usize,
    pub values: Vec<f64>,
}

impl Mask {
    pub fn constant(w: usize, h: usize, value: f64) -> Self {
        Mask {
            w,
            h,
            values: vec![value; w * h],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePrediction {
    pub instance_id: String,
    /// Filled from the owning image record; not part of the wire format.
    #[serde(skip)]
    pub image_id: String,
    pub class_probs: Vec<f64>,
    pub embedding: Vec<f64>,
    pub size_ratio: f64,
    #[serde(default)]
    pub mask: Option<Mask>,
    #[serde(default)]
    pub seg_entropy: Option<f64>,
}

impl InstancePrediction {
    /// Segmentation entropy of this instance. The dense mask wins when present.
    pub fn segmentation_entropy(&self) -> f64 {
        match &self.mask {
            Some(mask) => uncertainty::segmentation_entropy(mask).map(|s| s.value).unwrap_or(0.0),
            None => self.seg_entropy.unwrap_or(0.0),
        }
    }

    /// Index of the most probable class, lowest index on ties.
    pub fn winning_class(&self) -> usize {
        uncertainty::top_two(&self.class_probs).0 .0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePrediction {
    pub image_id: String,
    pub instances: Vec<InstancePrediction>,
    /// Optional image-level embedding. Strategies working on whole images
    /// fall back to the mean instance embedding when this is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl ImagePrediction {
    pub fn new(image_id: impl Into<String>, instances: Vec<InstancePrediction>) -> Self {
        let image_id = image_id.into();
        let instances = instances
            .into_iter()
            .map(|mut inst| {
                inst.image_id = image_id.clone();
                inst
            })
            .collect();
        ImagePrediction {
            image_id,
            instances,
            embedding: None,
        }
    }

    /// The explicit image embedding, or the mean of the instance embeddings.
    pub fn image_embedding(&self) -> Option<Vec<f64>> {
        if let Some(e) = &self.embedding {
            return Some(e.clone());
        }
        let first = self.instances.first()?;
        let mut mean = vec![0.0; first.embedding.len()];
        for inst in &self.instances {
            for (m, v) in mean.iter_mut().zip(&inst.embedding) {
                *m += v;
            }
        }
        let n = self.instances.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Some(mean)
    }
}

/// What went wrong with one record.
#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    Malformed(String),
    DuplicateImage,
    DuplicateInstance,
    ProbabilitySum(f64),
    NegativeProbability,
    ClassCount { expected: usize, found: usize },
    EmptyClassProbs,
    EmbeddingDimension { expected: usize, found: usize },
    EmptyEmbedding,
    ZeroNormEmbedding,
    ImageEmbeddingDimension { expected: usize, found: usize },
    SizeRatio(f64),
    MissingUncertainty,
    MaskShape { w: usize, h: usize, len: usize },
    MaskValue(f64),
    SegEntropyRange(f64),
    SegEntropyMismatch { stored: f64, recomputed: f64 },
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ViolationKind::*;
        match self {
            Malformed(msg) => write!(f, "malformed record: {msg}"),
            DuplicateImage => write!(f, "duplicate image id"),
            DuplicateInstance => write!(f, "duplicate instance id"),
            ProbabilitySum(s) => write!(f, "class_probs sum to {s} (must be 1 within {PROB_SUM_TOLERANCE})"),
            NegativeProbability => write!(f, "class_probs contains a negative entry"),
            ClassCount { expected, found } => {
                write!(f, "expected {expected} classes, found {found}")
            }
            EmptyClassProbs => write!(f, "class_probs is empty"),
            EmbeddingDimension { expected, found } => {
                write!(f, "embedding dimension {found}, pool uses {expected}")
            }
            EmptyEmbedding => write!(f, "embedding is empty"),
            ZeroNormEmbedding => write!(f, "embedding has zero norm"),
            ImageEmbeddingDimension { expected, found } => {
                write!(f, "image embedding dimension {found}, pool uses {expected}")
            }
            SizeRatio(s) => write!(f, "size_ratio {s} outside (0, 1]"),
            MissingUncertainty => write!(f, "neither mask nor seg_entropy present"),
            MaskShape { w, h, len } => {
                write!(f, "mask is {w}x{h} but carries {len} values")
            }
            MaskValue(v) => write!(f, "mask value {v} outside [0, 1]"),
            SegEntropyRange(v) => write!(f, "seg_entropy {v} outside [0, ln 2]"),
            SegEntropyMismatch { stored, recomputed } => {
                write!(f, "seg_entropy {stored} disagrees with mask entropy {recomputed}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// 1-based line in the source, when known.
    pub line: Option<usize>,
    pub image_id: Option<String>,
    pub instance_id: Option<String>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        match (&self.image_id, &self.instance_id) {
            (_, Some(inst)) => write!(f, "instance {inst}: ")?,
            (Some(img), None) => write!(f, "image {img}: ")?,
            _ => {}
        }
        write!(f, "{}", self.kind)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("read failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(Violation),
}

/// Immutable set of image predictions keyed (and ordered) by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pool {
    images: BTreeMap<String, ImagePrediction>,
    num_classes: Option<usize>,
    embedding_dim: Option<usize>,
}

impl Pool {
    /// Builds a pool, rejecting the first invariant violation.
    pub fn new(images: Vec<ImagePrediction>) -> Result<Self, IngestError> {
        let records: Vec<_> = images.into_iter().map(|img| (None, img)).collect();
        let (pool, violations) = check_records(records);
        match violations.into_iter().next() {
            Some(v) => Err(IngestError::Invalid(v)),
            None => Ok(pool),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_instances(&self) -> usize {
        self.images.values().map(|i| i.instances.len()).sum()
    }

    /// Class count K, if any instance has been seen.
    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding_dim
    }

    pub fn get(&self, image_id: &str) -> Option<&ImagePrediction> {
        self.images.get(image_id)
    }

    /// Images in ascending id order.
    pub fn images(&self) -> impl Iterator<Item = &ImagePrediction> {
        self.images.values()
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.images.keys().map(String::as_str)
    }

    /// Returns a copy with each image passed through `f`. Used by the
    /// simulator to swap in refreshed predictions without revalidating.
    pub(crate) fn map_images(&self, mut f: impl FnMut(&ImagePrediction) -> ImagePrediction) -> Pool {
        Pool {
            images: self.images.iter().map(|(k, v)| (k.clone(), f(v))).collect(),
            num_classes: self.num_classes,
            embedding_dim: self.embedding_dim,
        }
    }
}

#[derive(Deserialize)]
struct RawImage {
    image_id: String,
    instances: Vec<InstancePrediction>,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
}

fn open_maybe_gzip<R: Read + 'static>(source: R) -> std::io::Result<Box<dyn BufRead>> {
    let mut buffered = BufReader::new(source);
    let head = buffered.fill_buf()?;
    if head.len() >= 2 && head[0] == 0x1f && head[1] == 0x8b {
        Ok(Box::new(BufReader::new(GzDecoder::new(buffered))))
    } else {
        Ok(Box::new(buffered))
    }
}

/// Parses every line, turning syntax errors into violations rather than bailing.
fn parse_lines<R: Read + 'static>(
    source: R,
) -> Result<(Vec<(Option<usize>, ImagePrediction)>, Vec<Violation>), IngestError> {
    let reader = open_maybe_gzip(source)?;
    let mut records = Vec::new();
    let mut violations = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawImage>(&line) {
            Ok(raw) => {
                let mut img = ImagePrediction::new(raw.image_id, raw.instances);
                img.embedding = raw.embedding;
                records.push((Some(lineno), img));
            }
            Err(e) => violations.push(Violation {
                line: Some(lineno),
                image_id: None,
                instance_id: None,
                kind: ViolationKind::Malformed(e.to_string()),
            }),
        }
    }
    Ok((records, violations))
}

/// Reads a JSON Lines prediction stream (plain or gzip) into a validated pool.
pub fn ingest_predictions<R: Read + 'static>(source: R) -> Result<Pool, IngestError> {
    let (records, mut violations) = parse_lines(source)?;
    let (pool, more) = check_records(records);
    violations.extend(more);
    violations.sort_by_key(|v| v.line.unwrap_or(usize::MAX));
    match violations.into_iter().next() {
        Some(v) => Err(IngestError::Invalid(v)),
        None => Ok(pool),
    }
}

/// Ingests several shards and merges them as if they were one file.
#[cfg(feature = "parallel")]
pub fn ingest_shards<R: Read + Send + 'static>(shards: Vec<R>) -> Result<Pool, IngestError> {
    use rayon::prelude::*;
    let parsed: Vec<_> = shards.into_par_iter().map(parse_lines).collect();
    let mut records = Vec::new();
    for shard in parsed {
        let (recs, violations) = shard?;
        if let Some(v) = violations.into_iter().next() {
            return Err(IngestError::Invalid(v));
        }
        records.extend(recs);
    }
    let (pool, violations) = check_records(records);
    match violations.into_iter().next() {
        Some(v) => Err(IngestError::Invalid(v)),
        None => Ok(pool),
    }
}

/// Collects every invariant violation in a prediction stream.
pub fn validate_predictions<R: Read + 'static>(source: R) -> Result<Vec<Violation>, IngestError> {
    let (records, mut violations) = parse_lines(source)?;
    let (_, more) = check_records(records);
    violations.extend(more);
    violations.sort_by_key(|v| v.line.unwrap_or(usize::MAX));
    Ok(violations)
}

/// Writes the pool back out as JSON Lines in image id order.
pub fn write_predictions<W: Write>(pool: &Pool, mut out: W) -> std::io::Result<()> {
    for img in pool.images() {
        serde_json::to_writer(&mut out, img)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn check_records(records: Vec<(Option<usize>, ImagePrediction)>) -> (Pool, Vec<Violation>) {
    // Sort first so that the pool, and which record counts as the duplicate,
    // do not depend on line order.
    let mut records = records;
    records.sort_by(|a, b| a.1.image_id.cmp(&b.1.image_id).then(a.0.cmp(&b.0)));

    let mut violations = Vec::new();
    let mut num_classes: Option<usize> = None;
    let mut embedding_dim: Option<usize> = None;
    let mut seen_instances: HashMap<String, ()> = HashMap::new();
    let mut images = BTreeMap::new();

    // Reference dimensions come from the first instance in id order.
    if let Some(first) = records.iter().flat_map(|(_, img)| img.instances.first()).next() {
        if !first.class_probs.is_empty() {
            num_classes = Some(first.class_probs.len());
        }
        if !first.embedding.is_empty() {
            embedding_dim = Some(first.embedding.len());
        }
    }

    for (line, img) in records {
        let mut push = |instance_id: Option<&str>, kind| {
            violations.push(Violation {
                line,
                image_id: Some(img.image_id.clone()),
                instance_id: instance_id.map(str::to_owned),
                kind,
            })
        };
        if images.contains_key(&img.image_id) {
            push(None, ViolationKind::DuplicateImage);
            continue;
        }
        if let (Some(e), Some(dim)) = (&img.embedding, embedding_dim) {
            if e.len() != dim {
                push(
                    None,
                    ViolationKind::ImageEmbeddingDimension {
                        expected: dim,
                        found: e.len(),
                    },
                );
            }
        }
        for inst in &img.instances {
            let id = Some(inst.instance_id.as_str());
            if seen_instances.insert(inst.instance_id.clone(), ()).is_some() {
                push(id, ViolationKind::DuplicateInstance);
            }
            for kind in instance_violations(inst, num_classes, embedding_dim) {
                push(id, kind);
            }
        }
        images.insert(img.image_id.clone(), img);
    }

    (
        Pool {
            images,
            num_classes,
            embedding_dim,
        },
        violations,
    )
}

fn instance_violations(
    inst: &InstancePrediction,
    num_classes: Option<usize>,
    embedding_dim: Option<usize>,
) -> Vec<ViolationKind> {
    use ViolationKind::*;
    let mut out = Vec::new();

    if inst.class_probs.is_empty() {
        out.push(EmptyClassProbs);
    } else {
        if let Some(k) = num_classes {
            if inst.class_probs.len() != k {
                out.push(ClassCount {
                    expected: k,
                    found: inst.class_probs.len(),
                });
            }
        }
        if inst.class_probs.iter().any(|p| *p < 0.0) {
            out.push(NegativeProbability);
        }
        let sum: f64 = inst.class_probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            out.push(ProbabilitySum(sum));
        }
    }

    if inst.embedding.is_empty() {
        out.push(EmptyEmbedding);
    } else {
        if let Some(d) = embedding_dim {
            if inst.embedding.len() != d {
                out.push(EmbeddingDimension {
                    expected: d,
                    found: inst.embedding.len(),
                });
            }
        }
        if inst.embedding.iter().all(|v| *v == 0.0) {
            out.push(ZeroNormEmbedding);
        }
    }

    if !(inst.size_ratio > 0.0 && inst.size_ratio <= 1.0) {
        out.push(SizeRatio(inst.size_ratio));
    }

    let mut mask_entropy = None;
    match &inst.mask {
        Some(mask) => {
            if mask.w * mask.h != mask.values.len() || mask.values.is_empty() {
                out.push(MaskShape {
                    w: mask.w,
                    h: mask.h,
                    len: mask.values.len(),
                });
            } else if let Some(bad) = mask.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                out.push(MaskValue(*bad));
            } else {
                mask_entropy = uncertainty::segmentation_entropy(mask).ok().map(|s| s.value);
            }
        }
        None if inst.seg_entropy.is_none() => out.push(MissingUncertainty),
        None => {}
    }

    if let Some(se) = inst.seg_entropy {
        if !(0.0..=std::f64::consts::LN_2 + 1e-12).contains(&se) {
            out.push(SegEntropyRange(se));
        } else if let Some(recomputed) = mask_entropy {
            if (recomputed - se).abs() > SEG_ENTROPY_TOLERANCE {
                out.push(SegEntropyMismatch { stored: se, recomputed });
            }
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum PoolStateError {
    #[error("image {0} is not in the unlabeled set")]
    NotUnlabeled(String),
    #[error("image {0} selected more than once")]
    DuplicateSelection(String),
    #[error("image {0} is both labeled and unlabeled")]
    Overlap(String),
}

/// Labeled / unlabeled split plus the per-round annotation history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub labeled: BTreeSet<String>,
    pub unlabeled: BTreeSet<String>,
    pub history: Vec<Vec<String>>,
}

impl PoolState {
    pub fn new(
        labeled: impl IntoIterator<Item = String>,
        unlabeled: impl IntoIterator<Item = String>,
    ) -> Result<Self, PoolStateError> {
        let labeled: BTreeSet<String> = labeled.into_iter().collect();
        let unlabeled: BTreeSet<String> = unlabeled.into_iter().collect();
        if let Some(id) = labeled.intersection(&unlabeled).next() {
            return Err(PoolStateError::Overlap(id.clone()));
        }
        Ok(PoolState {
            labeled,
            unlabeled,
            history: Vec::new(),
        })
    }

    /// Every pool image not in `labeled` becomes unlabeled. Labeled ids
    /// without predictions are kept as labeled.
    pub fn from_pool(pool: &Pool, labeled: impl IntoIterator<Item = String>) -> Self {
        let labeled: BTreeSet<String> = labeled.into_iter().collect();
        let unlabeled = pool
            .image_ids()
            .filter(|id| !labeled.contains(*id))
            .map(str::to_owned)
            .collect();
        PoolState {
            labeled,
            unlabeled,
            history: Vec::new(),
        }
    }

    pub fn total(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    /// Moves `selected` from unlabeled to labeled and records the round.
    pub fn apply_round(&self, selected: &[String]) -> Result<PoolState, PoolStateError> {
        let mut seen = BTreeSet::new();
        for id in selected {
            if !self.unlabeled.contains(id) {
                return Err(PoolStateError::NotUnlabeled(id.clone()));
            }
            if !seen.insert(id) {
                return Err(PoolStateError::DuplicateSelection(id.clone()));
            }
        }
        let mut next = self.clone();
        for id in selected {
            next.unlabeled.remove(id);
            next.labeled.insert(id.clone());
        }
        next.history.push(selected.to_vec());
        Ok(next)
    }
}
