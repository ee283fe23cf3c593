//! Discrete optimal transport.
//!
//! Problems with at most [`EXACT_LIMIT`] sources and sinks are solved exactly
//! with the transportation simplex (u-v potentials on a spanning-tree basis).
//! Larger problems fall back to log-domain Sinkhorn iterations.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::datastore::Dictionary;
use crate::error::{Error, Result};

/// Largest side handled by the exact solver.
pub const EXACT_LIMIT: usize = 1024;

const SINKHORN_EPS: f64 = 1e-2;
const SINKHORN_MAX_ITER: usize = 10_000;
const SINKHORN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub gamma: Array2<f64>,
    pub cost: f64,
    pub marginal_a: Array1<f64>,
    pub marginal_b: Array1<f64>,
    /// `true` when the plan came from the exact solver.
    pub exact: bool,
}

impl TransportPlan {
    /// Largest absolute deviation of row and column sums from the marginals.
    pub fn marginal_error(&self) -> f64 {
        let rows = self.gamma.sum_axis(ndarray::Axis(1));
        let cols = self.gamma.sum_axis(ndarray::Axis(0));
        let ea = (&rows - &self.marginal_a).mapv(f64::abs).fold(0.0, |m: f64, v| m.max(*v));
        let eb = (&cols - &self.marginal_b).mapv(f64::abs).fold(0.0, |m: f64, v| m.max(*v));
        ea.max(eb)
    }
}

fn check_marginal(name: &str, m: ArrayView1<f64>) -> Result<()> {
    if m.is_empty() {
        return Err(Error::Marginals(format!("{name} is empty")));
    }
    if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Marginals(format!("{name} has a negative or non-finite entry")));
    }
    let s = m.sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Marginals(format!("{name} sums to {s}, expected 1")));
    }
    Ok(())
}

/// Minimizes `Σ γ ⊙ C` over plans with row sums `a` and column sums `b`.
pub fn solve_ot(cost: ArrayView2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<TransportPlan> {
    check_marginal("a", a)?;
    check_marginal("b", b)?;
    if cost.dim() != (a.len(), b.len()) {
        return Err(Error::Shape(format!(
            "cost is {:?} but marginals have lengths {} and {}",
            cost.dim(),
            a.len(),
            b.len()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Marginals("cost matrix has non-finite entries".into()));
    }
    let (gamma, exact) = if a.len().max(b.len()) <= EXACT_LIMIT {
        (network_simplex(cost, a, b), true)
    } else {
        (sinkhorn(cost, a, b), false)
    };
    let total = (&gamma * &cost).sum();
    Ok(TransportPlan {
        gamma,
        cost: total,
        marginal_a: a.to_owned(),
        marginal_b: b.to_owned(),
        exact,
    })
}

/// Entropic OT with the given regularization, for callers that want it
/// regardless of problem size.
pub fn solve_ot_entropic(
    cost: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
) -> Result<TransportPlan> {
    check_marginal("a", a)?;
    check_marginal("b", b)?;
    let gamma = sinkhorn(cost, a, b);
    let total = (&gamma * &cost).sum();
    Ok(TransportPlan {
        gamma,
        cost: total,
        marginal_a: a.to_owned(),
        marginal_b: b.to_owned(),
        exact: false,
    })
}

/// Transport distance between atom sets: uniform marginals, Euclidean cost.
pub fn wasserstein_atoms(da: &Dictionary, db: &Dictionary) -> Result<f64> {
    if da.dim() != db.dim() {
        return Err(Error::Shape(format!(
            "dictionaries live in R^{} and R^{}",
            da.dim(),
            db.dim()
        )));
    }
    let cost = euclidean_cost(da.atoms(), db.atoms());
    let a = Array1::from_elem(da.len(), 1.0 / da.len() as f64);
    let b = Array1::from_elem(db.len(), 1.0 / db.len() as f64);
    Ok(solve_ot(cost.view(), a.view(), b.view())?.cost)
}

/// Pairwise Euclidean distances between rows of `x` and rows of `y`.
pub fn euclidean_cost(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), y.nrows()));
    out.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let xi = x.row(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = crate::linalg::sq_dist(xi, y.row(j)).sqrt();
            }
        });
    out
}

// ---------------------------------------------------------------------------
// Transportation simplex

struct Basis {
    m: usize,
    n: usize,
    /// Basic cells `(i, j, flow)`.
    cells: Vec<(usize, usize, f64)>,
    /// Tree adjacency over nodes `0..m` (rows) and `m..m+n` (columns), storing
    /// indices into `cells`.
    adj: Vec<Vec<usize>>,
}

impl Basis {
    fn add(&mut self, i: usize, j: usize, flow: f64) {
        let id = self.cells.len();
        self.cells.push((i, j, flow));
        self.adj[i].push(id);
        self.adj[self.m + j].push(id);
    }

    fn other(&self, node: usize, cell: usize) -> usize {
        let (i, j, _) = self.cells[cell];
        if node == i {
            self.m + j
        } else {
            i
        }
    }

    /// Replaces the basic cell `leaving` with `(i, j)`.
    fn swap(&mut self, leaving: usize, i: usize, j: usize, flow: f64) {
        let (li, lj, _) = self.cells[leaving];
        self.adj[li].retain(|&c| c != leaving);
        self.adj[self.m + lj].retain(|&c| c != leaving);
        self.cells[leaving] = (i, j, flow);
        self.adj[i].push(leaving);
        self.adj[self.m + j].push(leaving);
    }

    fn potentials(&self, cost: ArrayView2<f64>, u: &mut [f64], v: &mut [f64], stack: &mut Vec<usize>) {
        let total = self.m + self.n;
        let mut seen = vec![false; total];
        stack.clear();
        stack.push(0);
        seen[0] = true;
        u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &c in &self.adj[node] {
                let next = self.other(node, c);
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                let (i, j, _) = self.cells[c];
                if next >= self.m {
                    v[j] = cost[[i, j]] - u[i];
                } else {
                    u[i] = cost[[i, j]] - v[j];
                }
                stack.push(next);
            }
        }
    }

    /// Cells on the tree path from row node `i` to column node `m + j`.
    fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let total = self.m + self.n;
        let mut parent: Vec<Option<usize>> = vec![None; total];
        let mut seen = vec![false; total];
        let mut stack = vec![i];
        seen[i] = true;
        let target = self.m + j;
        while let Some(node) = stack.pop() {
            if node == target {
                break;
            }
            for &c in &self.adj[node] {
                let next = self.other(node, c);
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some(c);
                    stack.push(next);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = target;
        while node != i {
            let c = parent[node].expect("basis is a spanning tree");
            cells.push(c);
            node = self.other(node, c);
        }
        cells.reverse();
        cells
    }
}

fn northwest_corner(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Basis {
    let (m, n) = (a.len(), b.len());
    let mut basis = Basis {
        m,
        n,
        cells: Vec::with_capacity(m + n - 1),
        adj: vec![Vec::new(); m + n],
    };
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        if i == m - 1 && j == n - 1 {
            // last cell absorbs rounding
            basis.add(i, j, sa[i].max(sb[j]).max(0.0));
            break;
        }
        let f = sa[i].min(sb[j]).max(0.0);
        basis.add(i, j, f);
        sa[i] -= f;
        sb[j] -= f;
        if j == n - 1 || (i < m - 1 && sa[i] <= sb[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
    basis
}

fn network_simplex(cost: ArrayView2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let (m, n) = cost.dim();
    let mut basis = northwest_corner(a, b);
    let scale = cost.iter().fold(0.0f64, |s, c| s.max(c.abs())).max(1.0);
    let tol = 1e-12 * scale;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut stack = Vec::new();
    let max_iter = 50 * (m + n) * (m + n) + 1000;

    for _ in 0..max_iter {
        basis.potentials(cost, &mut u, &mut v, &mut stack);

        // Dantzig pricing; ties go to the first cell in row-major order.
        let (best, bi, bj) = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut best = (-tol, usize::MAX, usize::MAX);
                for j in 0..n {
                    let r = cost[[i, j]] - u[i] - v[j];
                    if r < best.0 {
                        best = (r, i, j);
                    }
                }
                best
            })
            .reduce(
                || (-tol, usize::MAX, usize::MAX),
                |x, y| {
                    if y.0 < x.0 || (y.0 == x.0 && (y.1, y.2) < (x.1, x.2)) {
                        y
                    } else {
                        x
                    }
                },
            );
        if bi == usize::MAX || best >= -tol {
            break;
        }

        // Cycle: entering cell (+), then the tree path alternating -, +, ...
        let path = basis.path(bi, bj);
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (t, &c) in path.iter().enumerate() {
            if t % 2 == 0 {
                let f = basis.cells[c].2;
                if f < theta || (f == theta && c < leaving) {
                    theta = f;
                    leaving = c;
                }
            }
        }
        let theta = theta.max(0.0);
        for (t, &c) in path.iter().enumerate() {
            let cell = &mut basis.cells[c];
            if t % 2 == 0 {
                cell.2 = (cell.2 - theta).max(0.0);
            } else {
                cell.2 += theta;
            }
        }
        basis.swap(leaving, bi, bj, theta);
    }

    let mut gamma = Array2::zeros((m, n));
    for &(i, j, f) in &basis.cells {
        gamma[[i, j]] += f;
    }
    gamma
}

// ---------------------------------------------------------------------------
// Sinkhorn

fn logsumexp(it: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = it.collect();
    let mx = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + vals.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

fn sinkhorn(cost: ArrayView2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let (m, n) = cost.dim();
    let eps = SINKHORN_EPS;
    let la: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let cost_t = cost.t().to_owned();

    let row_update = |g: &[f64]| -> Vec<f64> {
        (0..m)
            .into_par_iter()
            .map(|i| {
                if la[i] == f64::NEG_INFINITY {
                    return 0.0;
                }
                -eps * logsumexp((0..n).map(|j| (g[j] - cost[[i, j]]) / eps + lb[j]))
            })
            .collect()
    };
    let col_update = |f: &[f64]| -> Vec<f64> {
        (0..n)
            .into_par_iter()
            .map(|j| {
                if lb[j] == f64::NEG_INFINITY {
                    return 0.0;
                }
                -eps * logsumexp((0..m).map(|i| (f[i] - cost_t[[j, i]]) / eps + la[i]))
            })
            .collect()
    };
    let plan = |f: &[f64], g: &[f64]| -> Array2<f64> {
        Array2::from_shape_fn((m, n), |(i, j)| {
            ((f[i] + g[j] - cost[[i, j]]) / eps + la[i] + lb[j]).exp()
        })
    };

    for it in 0..SINKHORN_MAX_ITER {
        f = row_update(&g);
        g = col_update(&f);
        if it % 10 == 9 || it + 1 == SINKHORN_MAX_ITER {
            // columns are exact after the g-update; check rows
            let p = plan(&f, &g);
            let err = p
                .sum_axis(ndarray::Axis(1))
                .iter()
                .zip(a.iter())
                .fold(0.0f64, |e, (r, t)| e.max((r - t).abs()));
            if err < SINKHORN_TOL {
                return p;
            }
        }
    }
    plan(&f, &g)
}
