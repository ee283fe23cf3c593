//! Linear assignment by shortest augmenting paths with dual potentials.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Permutation `p` maximizing `Σ score[i, p[i]]`.
///
/// Among optimal permutations the lexicographically smallest one is returned
/// (scores equal within `1e-9` relative tolerance count as ties).
pub fn hungarian_match(score: ArrayView2<f64>) -> Result<Vec<usize>> {
    let (n, m) = score.dim();
    if n != m {
        return Err(Error::Shape(format!("score matrix must be square, got {n}x{m}")));
    }
    if score.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape("score matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let cost = |i: usize, j: usize| -score[[i, j]];
    let (mut assign, u, v) = min_cost_assignment(n, cost);
    let scale = score.iter().fold(1.0f64, |s, x| s.max(x.abs()));
    let tight = |i: usize, j: usize| (cost(i, j) - u[i] - v[j]).abs() <= 1e-9 * scale;
    lexicographic_min(&mut assign, &tight);
    Ok(assign)
}

/// Returns `(row -> column, u, v)` with `cost(i,j) - u[i] - v[j] >= 0` and
/// equality on the assignment.
fn min_cost_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based arrays with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    (assign, u[1..].to_vec(), v[1..].to_vec())
}

/// Every optimal assignment is a perfect matching on tight edges. Walk rows in
/// order and move each row to the smallest tight column reachable by an
/// alternating cycle that leaves earlier rows untouched.
fn lexicographic_min(assign: &mut [usize], tight: &impl Fn(usize, usize) -> bool) {
    let n = assign.len();
    let mut owner = vec![0usize; n];
    for (i, &j) in assign.iter().enumerate() {
        owner[j] = i;
    }
    for i in 0..n {
        for j in 0..assign[i] {
            if owner[j] < i || !tight(i, j) {
                continue;
            }
            // Need an alternating path from owner[j] to column assign[i]
            // using rows > i only.
            let target = assign[i];
            if let Some(path) = alternating_path(owner[j], target, i, assign, &owner, tight) {
                // path: rows r_0 = owner[j], r_1, ... each moving to a new column.
                let mut moves: Vec<(usize, usize)> = path;
                moves.push((i, j));
                for &(r, c) in &moves {
                    assign[r] = c;
                }
                for (r, &c) in assign.iter().enumerate() {
                    owner[c] = r;
                }
                break;
            }
        }
    }
}

/// BFS over rows `> fixed`. Returns the reassignments `(row, new column)` that
/// free row `start`'s column and end by some row taking `target`.
fn alternating_path(
    start: usize,
    target: usize,
    fixed: usize,
    assign: &[usize],
    owner: &[usize],
    tight: &impl Fn(usize, usize) -> bool,
) -> Option<Vec<(usize, usize)>> {
    let n = assign.len();
    let mut prev: Vec<Option<usize>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(r) = queue.pop_front() {
        for c in 0..n {
            if !tight(r, c) || c == assign[r] {
                continue;
            }
            if c == target {
                let mut moves = vec![(r, c)];
                let mut cur = r;
                while let Some(p) = prev[cur] {
                    moves.push((p, assign[cur]));
                    cur = p;
                }
                return Some(moves);
            }
            let o = owner[c];
            if o > fixed && !seen[o] {
                seen[o] = true;
                prev[o] = Some(r);
                queue.push_back(o);
            }
        }
    }
    None
}
