//! Similarity mathematics: cosine kernel, optimal assignment, step-matched
//! workflow similarity, and top-k retrieval over an insertion-ordered index.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::model::{EmbeddingVector, RecordId};

/// Number of examples retrieved per iteration unless configured otherwise.
pub const DEFAULT_TOP_K: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimilarityError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine undefined for a zero vector")]
    ZeroVector,
    #[error("score matrix is empty")]
    EmptyMatrix,
    #[error("score matrix row {row} has {len} columns, expected {expected}")]
    RaggedMatrix { row: usize, len: usize, expected: usize },
    #[error("score matrix has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("workflow has no steps")]
    EmptyWorkflow,
    #[error("k must be positive")]
    InvalidK,
}

/// Cosine similarity in `[-1, 1]`.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SimilarityError> {
    cosine_slices(u.values(), v.values())
}

fn cosine_slices(u: &[f64], v: &[f64]) -> Result<f64, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    // sqrt of the product keeps cosine(e, e) exactly 1.
    Ok((dot / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(row, column)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_score: f64,
}

/// Maximum-score injective matching of size `min(rows, cols)`, solved with
/// the Hungarian method (shortest augmenting paths with potentials).
pub fn optimal_assignment(scores: &[Vec<f64>]) -> Result<Assignment, SimilarityError> {
    let rows = scores.len();
    let cols = scores.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(SimilarityError::EmptyMatrix);
    }
    for (r, row) in scores.iter().enumerate() {
        if row.len() != cols {
            return Err(SimilarityError::RaggedMatrix {
                row: r,
                len: row.len(),
                expected: cols,
            });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(SimilarityError::NonFinite { row: r, col: c });
        }
    }

    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let cost = |i: usize, j: usize| -> f64 {
        if transposed {
            -scores[j][i]
        } else {
            -scores[i][j]
        }
    };

    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| {
            let (i, j) = (owner[j] - 1, j - 1);
            if transposed {
                (j, i)
            } else {
                (i, j)
            }
        })
        .collect();
    pairs.sort_unstable();
    let total_score = pairs.iter().map(|&(r, c)| scores[r][c]).sum();
    Ok(Assignment { pairs, total_score })
}

/// Workflow similarity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Step-matched similarity between two workflows given their step
/// embeddings: negative cosines are clamped to zero, steps are matched by
/// optimal assignment, and the matched scores are averaged over the longer
/// workflow so unmatched steps count as zero.
pub fn workflow_similarity(
    a: &[EmbeddingVector],
    b: &[EmbeddingVector],
) -> Result<SimilarityScore, SimilarityError> {
    if a.is_empty() || b.is_empty() {
        return Err(SimilarityError::EmptyWorkflow);
    }
    let matrix = a
        .iter()
        .map(|x| b.iter().map(|y| cosine(x, y).map(|c| c.max(0.0))).collect())
        .collect::<Result<Vec<Vec<f64>>, _>>()?;
    let assignment = optimal_assignment(&matrix)?;
    // Summing in value order makes the result independent of which side is
    // the row dimension.
    let mut matched: Vec<f64> = assignment.pairs.iter().map(|&(r, c)| matrix[r][c]).collect();
    matched.sort_by(f64::total_cmp);
    let total: f64 = matched.iter().sum();
    let score = total / a.len().max(b.len()) as f64;
    Ok(SimilarityScore(score.clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: RecordId,
    pub score: f64,
}

/// Every index entry scored against the probe, descending by cosine; ties
/// keep index (insertion) order.
pub fn rank(probe: &EmbeddingVector, index: &[(RecordId, EmbeddingVector)]) -> Result<Vec<Scored>, SimilarityError> {
    let mut scored = index
        .iter()
        .map(|(id, v)| cosine(probe, v).map(|score| Scored { id: *id, score }))
        .collect::<Result<Vec<_>, _>>()?;
    // Stable sort preserves insertion order among equal scores.
    scored.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    Ok(scored)
}

/// Ids of the `k` entries most similar to the probe.
pub fn top_k(
    probe: &EmbeddingVector,
    index: &[(RecordId, EmbeddingVector)],
    k: usize,
) -> Result<Vec<RecordId>, SimilarityError> {
    Ok(top_k_scored(probe, index, k)?.into_iter().map(|s| s.id).collect())
}

pub fn top_k_scored(
    probe: &EmbeddingVector,
    index: &[(RecordId, EmbeddingVector)],
    k: usize,
) -> Result<Vec<Scored>, SimilarityError> {
    if k == 0 {
        return Err(SimilarityError::InvalidK);
    }
    let mut ranked = rank(probe, index)?;
    ranked.truncate(k);
    Ok(ranked)
}
