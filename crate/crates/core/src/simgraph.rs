//! Thresholded cosine-similarity structure between uncertain candidates and
//! the full instance universe, and its conversion into a cover problem.

use std::collections::HashMap;

use thiserror::Error;

use crate::maxcover::CoverProblem;

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("embedding of '{0}' has zero norm")]
    ZeroNorm(String),
    #[error("candidate '{0}' is not part of the universe")]
    NotInUniverse(String),
    #[error("'{0}' appears twice in the universe")]
    DuplicateId(String),
    #[error("similarity threshold must lie in (0, 1), got {0}")]
    Sigma(f64),
}

/// An id paired with its embedding.
#[derive(Debug, Clone, Copy)]
pub struct Embedded<'a> {
    pub id: &'a str,
    pub embedding: &'a [f64],
}

impl<'a> Embedded<'a> {
    pub fn new(id: &'a str, embedding: &'a [f64]) -> Self {
        Embedded { id, embedding }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(SimilarityError::ZeroNorm("a".into()));
    }
    if nb == 0.0 {
        return Err(SimilarityError::ZeroNorm("b".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Sparse `|candidates| x |universe|` matrix holding only similarities above sigma.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    /// Candidate ids in uncertainty-rank order.
    pub rows: Vec<String>,
    /// Universe ids, ascending.
    pub cols: Vec<String>,
    /// Per row: `(column index, similarity)` sorted by column.
    pub entries: Vec<Vec<(usize, f64)>>,
    pub sigma: f64,
}

impl SimilarityMatrix {
    pub fn nnz(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.cols.binary_search_by(|x| x.as_str().cmp(col)).ok()?;
        self.entries[r]
            .binary_search_by_key(&c, |(j, _)| *j)
            .ok()
            .map(|i| self.entries[r][i].1)
    }
}

fn normalized(items: &[Embedded<'_>]) -> Result<Vec<Vec<f64>>, SimilarityError> {
    let dim = items.first().map(|e| e.embedding.len()).unwrap_or(0);
    items
        .iter()
        .map(|e| {
            if e.embedding.len() != dim {
                return Err(SimilarityError::DimensionMismatch(dim, e.embedding.len()));
            }
            let n = norm(e.embedding);
            if n == 0.0 {
                return Err(SimilarityError::ZeroNorm(e.id.to_owned()));
            }
            Ok(e.embedding.iter().map(|x| x / n).collect())
        })
        .collect()
}

/// Computes every candidate-universe similarity and keeps those strictly
/// above `sigma`. A candidate's entry against itself is exactly 1.
pub fn build_similarity_matrix(
    candidates: &[Embedded<'_>],
    universe: &[Embedded<'_>],
    sigma: f64,
) -> Result<SimilarityMatrix, SimilarityError> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(SimilarityError::Sigma(sigma));
    }
    let mut universe: Vec<Embedded<'_>> = universe.to_vec();
    universe.sort_by(|a, b| a.id.cmp(b.id));
    if let Some(w) = universe.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(SimilarityError::DuplicateId(w[0].id.to_owned()));
    }
    let position: HashMap<&str, usize> = universe.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
    let row_cols: Vec<usize> = candidates
        .iter()
        .map(|c| {
            position
                .get(c.id)
                .copied()
                .ok_or_else(|| SimilarityError::NotInUniverse(c.id.to_owned()))
        })
        .collect::<Result<_, _>>()?;
    let unit = normalized(&universe)?;

    let row = |&self_col: &usize| -> Vec<(usize, f64)> {
        let r = &unit[self_col];
        unit.iter()
            .enumerate()
            .filter_map(|(j, u)| {
                let s = if j == self_col { 1.0 } else { dot(r, u).clamp(-1.0, 1.0) };
                (s > sigma).then_some((j, s))
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let entries = {
        use rayon::prelude::*;
        row_cols.par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let entries = row_cols.iter().map(row).collect();

    Ok(SimilarityMatrix {
        rows: candidates.iter().map(|c| c.id.to_owned()).collect(),
        cols: universe.iter().map(|e| e.id.to_owned()).collect(),
        entries,
        sigma,
    })
}

/// One subset per row holding its above-threshold columns. The universe is
/// every column that appears in at least one row, including instances that
/// are not candidates themselves.
pub fn to_cover_problem(matrix: &SimilarityMatrix) -> CoverProblem {
    let mut used = vec![false; matrix.cols.len()];
    for row in &matrix.entries {
        for &(j, _) in row {
            used[j] = true;
        }
    }
    let mut remap = vec![u32::MAX; matrix.cols.len()];
    let mut elements = Vec::new();
    for (j, &u) in used.iter().enumerate() {
        if u {
            remap[j] = elements.len() as u32;
            elements.push(matrix.cols[j].clone());
        }
    }
    let subsets = matrix
        .entries
        .iter()
        .map(|row| row.iter().map(|&(j, _)| remap[j]).collect())
        .collect();
    CoverProblem::from_parts(matrix.rows.clone(), subsets, elements)
}
