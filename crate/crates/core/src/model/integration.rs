//! Token integration: cross-half similarity of keys, greedy one-to-one pair
//! selection, and the index groups that average each pair into one token.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// One merged pair: index in the first half, index in the second half,
/// and their key similarity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergePair {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

/// Merges of one block for one sample.
///
/// `groups[r]` lists the pre-merge token indices (0 is the class token)
/// averaged into post-merge token `r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMerge {
    pub pairs: Vec<MergePair>,
    pub groups: Vec<Vec<usize>>,
}

impl BlockMerge {
    /// Old index to new index for every pre-merge token.
    pub fn survivor_map(&self) -> Vec<usize> {
        let n = self.groups.iter().map(|g| g.len()).sum();
        let mut map = vec![0; n];
        for (r, g) in self.groups.iter().enumerate() {
            for &i in g {
                map[i] = r;
            }
        }
        map
    }
}

/// Sizes of the two halves of `n` non-class tokens: the first takes the
/// extra token when `n` is odd.
pub fn split_halves(n: usize) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(Error::Dimension(format!("token integration needs at least 2 tokens, got {n}")));
    }
    Ok((n.div_ceil(2), n / 2))
}

/// Cosine similarity between every row of `t1` and every row of `t2`.
/// Rows with zero norm score -1 against everything.
pub fn pair_similarity(t1: &[Vec<Real>], t2: &[Vec<Real>]) -> Vec<Vec<f64>> {
    let norm = |v: &[Real]| v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    let n2: Vec<f64> = t2.iter().map(|v| norm(v)).collect();
    t1.iter()
        .map(|u| {
            let nu = norm(u);
            t2.iter()
                .zip(&n2)
                .map(|(v, &nv)| {
                    if nu == 0.0 || nv == 0.0 {
                        return -1.0;
                    }
                    let dot: f64 = u.iter().zip(v).map(|(x, y)| *x as f64 * *y as f64).sum();
                    dot / (nu * nv)
                })
                .collect()
        })
        .collect()
}

/// Greedy matching: take the largest remaining cell, drop its row and
/// column, `k` times. Ties go to the lower row, then the lower column.
pub fn select_top_pairs(sim: &[Vec<f64>], k: usize) -> Result<Vec<MergePair>> {
    let rows = sim.len();
    let cols = sim.first().map_or(0, |r| r.len());
    if k > rows.min(cols) {
        return Err(Error::Config(format!("cannot pick {k} pairs from a {rows}x{cols} similarity matrix")));
    }
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut pairs = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, usize)> = None;
        for (i, row) in sim.iter().enumerate() {
            if row_used[i] {
                continue;
            }
            for (j, &s) in row.iter().enumerate() {
                if !col_used[j] && best.is_none_or(|(bi, bj)| s > sim[bi][bj]) {
                    best = Some((i, j));
                }
            }
        }
        let (i, j) = best.expect("k <= min(rows, cols)");
        row_used[i] = true;
        col_used[j] = true;
        pairs.push(MergePair { a: i, b: j, similarity: sim[i][j] });
    }
    Ok(pairs)
}

/// Index groups for a sequence of `n` tokens (class token first) whose
/// first half holds `n1` tokens: class token, merged pairs in selection
/// order, then unmerged tokens in their original order.
pub fn merge_groups(n: usize, n1: usize, pairs: &[MergePair]) -> Result<Vec<Vec<usize>>> {
    let mut used = vec![false; n];
    used[0] = true;
    let mut groups = vec![vec![0]];
    for p in pairs {
        let (i, j) = (1 + p.a, 1 + n1 + p.b);
        if p.a >= n1 || j >= n {
            return Err(Error::Contract(format!("merge pair ({}, {}) out of range", p.a, p.b)));
        }
        if used[i] || used[j] {
            return Err(Error::Contract(format!("merge pair ({}, {}) overlaps an earlier pair", p.a, p.b)));
        }
        used[i] = true;
        used[j] = true;
        groups.push(vec![i, j]);
    }
    groups.extend((1..n).filter(|&i| !used[i]).map(|i| vec![i]));
    Ok(groups)
}

/// Averages the traced pairs of a `[batch, n, d]` token tensor, one trace
/// per sample.
pub fn merge_pairs(tokens: &Tensor, merges: &[BlockMerge]) -> Result<Tensor> {
    let groups: Vec<Vec<Vec<usize>>> = merges.iter().map(|m| m.groups.clone()).collect();
    tokens.gather_groups(&groups)
}
