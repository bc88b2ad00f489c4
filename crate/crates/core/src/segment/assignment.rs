//! Minimum-cost perfect matching on square cost matrices.
//!
//! The exact solver is the shortest-augmenting-path form of the Hungarian
//! method with row and column potentials, `O(n^3)`. Among all optimal
//! permutations it returns the lexicographically smallest one: the final
//! potentials are dual optimal, so every optimal permutation lives on the
//! zero-reduced-cost ("tight") edges, and a greedy pass over rows picks the
//! smallest tight column that still admits a perfect matching.

use super::SegmentError;

/// Dense square cost matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self, SegmentError> {
        if data.len() != n * n {
            return Err(SegmentError::NonSquare {
                rows: n,
                cols: data.len().checked_div(n).unwrap_or(data.len()),
            });
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, SegmentError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(SegmentError::NonSquare {
                    rows: n,
                    cols: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.data[i * n + j];
            }
        }
        Self { n, data }
    }

    /// Sum of `C[i, perm[i]]` in row order.
    pub fn cost_of(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

/// A matching: row `i` is assigned column `permutation[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

/// Exact minimum-cost one-to-one matching.
pub fn min_cost_matching(cost: &CostMatrix) -> Result<Assignment, SegmentError> {
    check_finite(cost)?;
    let n = cost.size();
    if n == 0 {
        return Ok(Assignment {
            permutation: Vec::new(),
            total_cost: 0.0,
        });
    }
    let (mut perm, u, v) = hungarian(cost);
    lexicographic_refine(cost, &mut perm, &u, &v);
    let total_cost = cost.cost_of(&perm);
    Ok(Assignment {
        permutation: perm,
        total_cost,
    })
}

/// Greedy matching: each row in order takes its cheapest free column (lowest
/// index on ties). Never cheaper than the exact optimum.
pub fn greedy_matching(cost: &CostMatrix) -> Result<Assignment, SegmentError> {
    check_finite(cost)?;
    let n = cost.size();
    let mut taken = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    for i in 0..n {
        let row = cost.row(i);
        let mut best = usize::MAX;
        for j in 0..n {
            if !taken[j] && (best == usize::MAX || row[j] < row[best]) {
                best = j;
            }
        }
        taken[best] = true;
        perm.push(best);
    }
    let total_cost = cost.cost_of(&perm);
    Ok(Assignment {
        permutation: perm,
        total_cost,
    })
}

fn check_finite(cost: &CostMatrix) -> Result<(), SegmentError> {
    if let Some(k) = cost.data.iter().position(|c| !c.is_finite()) {
        return Err(SegmentError::NonFinite {
            row: k / cost.n,
            col: k % cost.n,
        });
    }
    Ok(())
}

/// Returns `(perm, u, v)` with `perm[i]` the column of row `i` and
/// `u[i] + v[j] <= C[i][j]` for all pairs, tight on the matching.
fn hungarian(cost: &CostMatrix) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.size();
    // 1-based internally; index 0 is the virtual root column/row.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = cost.row(i0 - 1);
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
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

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    (perm, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites `perm` into the lexicographically smallest permutation that uses
/// only tight edges under the dual `(u, v)`.
fn lexicographic_refine(cost: &CostMatrix, perm: &mut [usize], u: &[f64], v: &[f64]) {
    let n = cost.size();
    let scale = cost.data.iter().fold(1.0f64, |m, c| m.max(c.abs()));
    let eps = 1e-12 * scale * n as f64;

    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| cost.get(i, j) - u[i] - v[j] <= eps)
                .collect()
        })
        .collect();
    // Fast path: a unique tight column per row means the matching is forced.
    if tight.iter().all(|t| t.len() == 1) {
        return;
    }

    let mut row_of = vec![0usize; n];
    for (i, &j) in perm.iter().enumerate() {
        row_of[j] = i;
    }

    let mut prev_row = vec![usize::MAX; n];
    let mut queue = Vec::with_capacity(n);

    for i in 0..n {
        let current = perm[i];
        for &j in &tight[i] {
            if j == current {
                break;
            }
            let r0 = row_of[j];
            if r0 < i {
                continue;
            }
            // Alternating path r0 -> ... -> `current`, over rows > i, so that
            // row i can take column j.
            prev_row.iter_mut().for_each(|x| *x = usize::MAX);
            queue.clear();
            queue.push(r0);
            prev_row[r0] = r0;
            let mut head = 0;
            let mut found: Option<usize> = None;
            'bfs: while head < queue.len() {
                let r = queue[head];
                head += 1;
                for &c in &tight[r] {
                    if c == j {
                        continue;
                    }
                    if c == current {
                        found = Some(r);
                        break 'bfs;
                    }
                    let next = row_of[c];
                    if next <= i || prev_row[next] != usize::MAX {
                        continue;
                    }
                    prev_row[next] = r;
                    queue.push(next);
                }
            }
            if let Some(last) = found {
                // Walk back: `last` moves to `current`; every earlier row moves
                // to the column its successor held.
                let mut r = last;
                let mut target = current;
                loop {
                    let held = perm[r];
                    perm[r] = target;
                    row_of[target] = r;
                    if r == r0 {
                        break;
                    }
                    target = held;
                    r = prev_row[r];
                }
                perm[i] = j;
                row_of[j] = i;
                break;
            }
        }
    }
}
