//! Dynamic token selection: attention matrices of earlier blocks are carried
//! through later merges onto the final token set, chained by rollout, and
//! the class row of the product picks one token per head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Which blocks feed the rollout product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RolloutScope {
    /// Only the blocks after token integration.
    ExtractorOnly,
    /// Every block before the final one, integration blocks projected.
    AllProjected,
}

impl std::str::FromStr for RolloutScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<RolloutScope> {
        match s {
            "extractor-only" | "extractor_only" => Ok(RolloutScope::ExtractorOnly),
            "all-projected" | "all_projected" => Ok(RolloutScope::AllProjected),
            _ => Err(Error::Config(format!("unknown rollout scope {s:?}"))),
        }
    }
}

impl std::fmt::Display for RolloutScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RolloutScope::ExtractorOnly => "extractor-only",
            RolloutScope::AllProjected => "all-projected",
        })
    }
}

/// Carries an `n x n` row-major matrix through successive merges, each given
/// as index groups. Merged rows are averaged, merged columns summed, and
/// rows renormalized to sum to one.
pub fn project_attention(matrix: &[Real], n: usize, merges: &[&[Vec<usize>]]) -> Result<Vec<Real>> {
    if matrix.len() != n * n {
        return Err(Error::Contract(format!("{} values for a {n}x{n} attention matrix", matrix.len())));
    }
    let mut m = matrix.to_vec();
    let mut n = n;
    for groups in merges {
        let covered: usize = groups.iter().map(|g| g.len()).sum();
        if covered != n || groups.iter().flatten().any(|&i| i >= n) {
            return Err(Error::Contract(format!("merge groups cover {covered} tokens, matrix has {n}")));
        }
        let k = groups.len();
        let mut out = vec![0.0; k * k];
        for (r, rg) in groups.iter().enumerate() {
            let w = 1.0 / rg.len() as Real;
            for (c, cg) in groups.iter().enumerate() {
                let mut acc = 0.0;
                for &i in rg {
                    for &j in cg {
                        acc += m[i * n + j];
                    }
                }
                out[r * k + c] = w * acc;
            }
        }
        for row in out.chunks_mut(k) {
            let s: Real = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        m = out;
        n = k;
    }
    Ok(m)
}

/// `A_L * ... * A_2 * A_1` for `n x n` row-major matrices given first to last.
pub fn attention_rollout(matrices: &[Vec<Real>], n: usize) -> Result<Vec<Real>> {
    let first = matrices.first().ok_or_else(|| Error::Dimension("rollout over zero matrices".into()))?;
    if let Some(bad) = matrices.iter().find(|m| m.len() != n * n) {
        return Err(Error::Dimension(format!("rollout expects {n}x{n} matrices, got {} values", bad.len())));
    }
    let mut acc = first.clone();
    for a in &matrices[1..] {
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for p in 0..n {
                let aip = a[i * n + p];
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    next[i * n + j] += aip * acc[p * n + j];
                }
            }
        }
        acc = next;
    }
    Ok(acc)
}

/// Index of the largest class-row entry over non-class columns, lowest on ties.
pub fn select_token(rollout: &[Real], n: usize) -> Result<usize> {
    if n < 2 || rollout.len() != n * n {
        return Err(Error::Config(format!("token selection needs at least 2 tokens, got {n}")));
    }
    let row = &rollout[..n];
    let mut best = 1;
    for j in 2..n {
        if row[j] > row[best] {
            best = j;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> Vec<Real> {
        (0..n * n).map(|i| if i % (n + 1) == 0 { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn no_merges_is_identity_projection() {
        let m = vec![0.0, 1.0, 0.5, 0.5];
        assert_eq!(project_attention(&m, 2, &[]).unwrap(), m);
    }

    #[test]
    fn hand_projection() {
        // tokens 1 and 2 merge
        let m = vec![
            0.0, 0.6, 0.4, //
            0.5, 0.0, 0.5, //
            0.2, 0.8, 0.0,
        ];
        let groups = vec![vec![0], vec![1, 2]];
        let p = project_attention(&m, 3, &[&groups]).unwrap();
        // row 0: [0, 1.0]; row 1: mean of rows 1,2 -> [0.35, 0.65]
        let want = [0.0, 1.0, 0.35, 0.65];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(project_attention(&m, 3, &[&[vec![0], vec![1]]]).is_err());
    }

    #[test]
    fn rollout_edges() {
        let id = identity(3);
        assert_eq!(attention_rollout(&[id.clone(), id.clone()], 3).unwrap(), id);
        let a = vec![0.0, 1.0, 0.3, 0.7];
        assert_eq!(attention_rollout(&[a.clone()], 2).unwrap(), a);
        // later matrices act on the left
        let b = vec![0.5, 0.5, 1.0, 0.0];
        let r = attention_rollout(&[a.clone(), b], 2).unwrap();
        let want = [0.15, 0.85, 0.0, 1.0];
        for (x, y) in r.iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_skips_class_column_and_breaks_ties_low() {
        let r = vec![0.9, 0.05, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(select_token(&r, 3).unwrap(), 1);
        assert!(select_token(&[1.0], 1).is_err());
    }
}
