//! Encoders. All functions take one input row (or a batch for BatchTopK) and
//! return sparse `(atom, value)` lists sorted by atom index.

use ndarray::{Array1, ArrayView1, ArrayView2};

/// Matching pursuit trace: the atom picked at each step, the coefficient
/// `D_i · r` added for it, and the residuals `r_0 = x, …, r_κ`.
#[derive(Debug, Clone)]
pub struct MpTrace {
    pub steps: Vec<(usize, f64)>,
    pub residuals: Vec<Array1<f64>>,
}

impl MpTrace {
    /// Accumulated code: repeated picks of one atom are summed.
    pub fn code(&self) -> Vec<(usize, f64)> {
        let mut z: Vec<(usize, f64)> = Vec::with_capacity(self.steps.len());
        let mut sorted = self.steps.clone();
        sorted.sort_by_key(|s| s.0);
        for (i, v) in sorted {
            match z.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => z.push((i, v)),
            }
        }
        z.retain(|e| e.1 != 0.0);
        z
    }

    pub fn residual(&self) -> &Array1<f64> {
        self.residuals.last().expect("r_0 is always present")
    }
}

/// Index of the largest `|c_i|`; the lowest index wins ties.
#[inline]
fn argmax_abs(c: &[f64]) -> usize {
    let mut best = 0;
    let mut val = f64::NEG_INFINITY;
    for (i, v) in c.iter().enumerate() {
        let a = v.abs();
        if a > val {
            val = a;
            best = i;
        }
    }
    best
}

/// κ steps of matching pursuit on `x` with unit-norm `atoms` (`K × d`).
///
/// `gram` (`D·Dᵀ`) lets correlations be updated in `O(K)` per step instead of
/// recomputed in `O(Kd)`.
pub fn mp_trace(x: ArrayView1<f64>, atoms: ArrayView2<f64>, gram: Option<ArrayView2<f64>>, kappa: usize) -> MpTrace {
    let mut r = x.to_owned();
    let mut c: Vec<f64> = atoms.dot(&r).to_vec();
    let mut steps = Vec::with_capacity(kappa);
    let mut residuals = Vec::with_capacity(kappa + 1);
    residuals.push(r.clone());
    for _ in 0..kappa {
        let i = argmax_abs(&c);
        let alpha = match gram {
            Some(_) => c[i],
            None => atoms.row(i).dot(&r),
        };
        r.scaled_add(-alpha, &atoms.row(i));
        steps.push((i, alpha));
        residuals.push(r.clone());
        match gram {
            Some(g) => {
                for (cj, gj) in c.iter_mut().zip(g.column(i)) {
                    *cj -= alpha * gj;
                }
            }
            None => c = atoms.dot(&r).to_vec(),
        }
    }
    MpTrace { steps, residuals }
}

/// Matching pursuit code for one input.
pub fn encode_mp(x: ArrayView1<f64>, atoms: ArrayView2<f64>, kappa: usize) -> Vec<(usize, f64)> {
    mp_trace(x, atoms, None, kappa).code()
}

/// `W x + b`.
pub fn pre_activation(x: ArrayView1<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    w.dot(&x) + b
}

/// `max(0, W x + b)`.
pub fn encode_relu(x: ArrayView1<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Vec<(usize, f64)> {
    relu_of(pre_activation(x, w, b).view())
}

pub(crate) fn relu_of(pre: ArrayView1<f64>) -> Vec<(usize, f64)> {
    pre.iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(i, v)| (i, *v))
        .collect()
}

/// `a_i` where `a_i > θ_i` (strict), else 0, with `a = W x + b`.
pub fn encode_jumprelu(
    x: ArrayView1<f64>,
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    theta: ArrayView1<f64>,
) -> Vec<(usize, f64)> {
    jumprelu_of(pre_activation(x, w, b).view(), theta)
}

pub(crate) fn jumprelu_of(pre: ArrayView1<f64>, theta: ArrayView1<f64>) -> Vec<(usize, f64)> {
    pre.iter()
        .zip(theta)
        .enumerate()
        .filter(|(_, (a, t))| **a > **t && **a != 0.0)
        .map(|(i, (a, _))| (i, *a))
        .collect()
}

/// The κ largest positive pre-activations; ties prefer the lower index.
pub fn encode_topk(x: ArrayView1<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>, kappa: usize) -> Vec<(usize, f64)> {
    topk_of(pre_activation(x, w, b).view(), kappa)
}

pub(crate) fn topk_of(pre: ArrayView1<f64>, kappa: usize) -> Vec<(usize, f64)> {
    let mut pos: Vec<(usize, f64)> = relu_of(pre);
    if pos.len() > kappa {
        pos.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        pos.truncate(kappa);
        pos.sort_by_key(|e| e.0);
    }
    pos
}

/// Keeps the `rows · κ` largest positive pre-activations across the whole
/// batch, so a single row may hold more than κ entries.
pub fn encode_batchtopk(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    kappa: usize,
) -> Vec<Vec<(usize, f64)>> {
    let pre: Vec<Array1<f64>> = x.rows().into_iter().map(|r| pre_activation(r, w, b)).collect();
    batchtopk_of(&pre, kappa)
}

pub(crate) fn batchtopk_of(pre: &[Array1<f64>], kappa: usize) -> Vec<Vec<(usize, f64)>> {
    let mut all: Vec<(usize, usize, f64)> = pre
        .iter()
        .enumerate()
        .flat_map(|(r, p)| relu_of(p.view()).into_iter().map(move |(j, v)| (r, j, v)))
        .collect();
    let budget = pre.len() * kappa;
    if all.len() > budget {
        all.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        all.truncate(budget);
    }
    let mut out = vec![Vec::new(); pre.len()];
    for (r, j, v) in all {
        out[r].push((j, v));
    }
    for row in &mut out {
        row.sort_by_key(|e| e.0);
    }
    out
}

/// `z · D` for one sparse row.
pub fn decode(z: &[(usize, f64)], atoms: ArrayView2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(atoms.ncols());
    for &(j, v) in z {
        out.scaled_add(v, &atoms.row(j));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_atoms(seed: u64, k: usize, d: usize) -> Array2<f64> {
        let mut rng = crate::rng::SeedStream::new(seed).rng("atoms", 0);
        let m = Array2::from_shape_fn((k, d), |_| rng.random_range(-1.0..1.0));
        crate::linalg::normalize_rows_lenient(m.view())
    }

    #[test]
    fn mp_self_match() {
        let d = random_atoms(1, 6, 4);
        let t = mp_trace(d.row(3), d.view(), None, 1);
        assert_eq!(t.steps[0].0, 3);
        assert!((t.steps[0].1 - 1.0).abs() < 1e-12);
        assert!(t.residual().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mp_zero_input() {
        let d = random_atoms(1, 6, 4);
        assert!(encode_mp(Array1::zeros(4).view(), d.view(), 3).is_empty());
    }

    #[test]
    fn mp_matches_hand_trace() {
        let d = random_atoms(2, 6, 4);
        let x = array![0.3, -1.2, 0.5, 0.9];
        // straight-line reference of two iterations
        let corr = |r: &Array1<f64>| -> Vec<f64> { (0..6).map(|i| d.row(i).dot(r)).collect() };
        let pick = |c: &[f64]| -> usize {
            let mut b = 0;
            for i in 1..c.len() {
                if c[i].abs() > c[b].abs() {
                    b = i;
                }
            }
            b
        };
        let r0 = x.clone();
        let c0 = corr(&r0);
        let i1 = pick(&c0);
        let z1 = c0[i1];
        let r1 = &r0 - &(&d.row(i1) * z1);
        let c1 = corr(&r1);
        let i2 = pick(&c1);
        let z2 = c1[i2];
        let r2 = &r1 - &(&d.row(i2) * z2);

        for gram in [None, Some(d.dot(&d.t()))] {
            let t = mp_trace(x.view(), d.view(), gram.as_ref().map(|g| g.view()), 2);
            assert_eq!(t.steps[0].0, i1);
            assert_eq!(t.steps[1].0, i2);
            assert!((t.steps[0].1 - z1).abs() < 1e-12);
            assert!((t.steps[1].1 - z2).abs() < 1e-12);
            for (a, b) in t.residual().iter().zip(r2.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mp_tie_prefers_lowest_index() {
        let d = array![[1.0, 0.0], [0.0, 1.0]];
        let x = array![1.0, 1.0];
        assert_eq!(mp_trace(x.view(), d.view(), None, 1).steps[0].0, 0);
    }

    proptest! {
        #[test]
        fn mp_residual_is_non_increasing(seed in 0u64..500, kappa in 1usize..10) {
            let d = random_atoms(seed, 12, 5);
            let mut rng = crate::rng::SeedStream::new(seed).rng("x", 0);
            let x: Array1<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = mp_trace(x.view(), d.view(), None, kappa);
            let norms: Vec<f64> = t.residuals.iter().map(|r| r.dot(r).sqrt()).collect();
            for w in norms.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            // reconstruction never worse than the zero code
            let rec = decode(&t.code(), d.view());
            let err = (&x - &rec).mapv(|v| v * v).sum();
            prop_assert!(err <= x.dot(&x) + 1e-9);
        }
    }

    #[test]
    fn relu_cases() {
        let w = Array2::<f64>::eye(3);
        let neg = array![-1.0, -2.0, -0.5];
        assert!(encode_relu(neg.view(), w.view(), Array1::zeros(3).view()).is_empty());
        let x = array![1.0, 0.0, 2.0];
        let wpad = ndarray::concatenate![ndarray::Axis(0), w, Array2::<f64>::zeros((2, 3))];
        let z = encode_relu(x.view(), wpad.view(), Array1::zeros(5).view());
        assert_eq!(z, vec![(0, 1.0), (2, 2.0)]);
    }

    #[test]
    fn random_affine_encoders_match_oracles() {
        let mut rng = crate::rng::SeedStream::new(3).rng("enc", 0);
        let w = Array2::from_shape_fn((10, 4), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(10, |_| rng.random_range(-0.5..0.5));
        let theta = Array1::from_shape_fn(10, |_| rng.random_range(0.0..0.5));
        for _ in 0..50 {
            let x: Array1<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pre: Vec<f64> = (0..10).map(|i| w.row(i).dot(&x) + b[i]).collect();
            let dense = |z: Vec<(usize, f64)>| {
                let mut v = vec![0.0; 10];
                z.into_iter().for_each(|(i, a)| v[i] = a);
                v
            };
            let relu: Vec<f64> = pre.iter().map(|p| p.max(0.0)).collect();
            assert_eq!(dense(encode_relu(x.view(), w.view(), b.view())), relu);
            let jr: Vec<f64> = pre.iter().zip(&theta).map(|(p, t)| if p > t { *p } else { 0.0 }).collect();
            assert_eq!(dense(encode_jumprelu(x.view(), w.view(), b.view(), theta.view())), jr);
            // full sort then mask
            let mut order: Vec<usize> = (0..10).collect();
            order.sort_by(|&i, &j| pre[j].total_cmp(&pre[i]).then(i.cmp(&j)));
            let mut tk = vec![0.0; 10];
            for &i in order.iter().take(3) {
                tk[i] = pre[i].max(0.0);
            }
            assert_eq!(dense(encode_topk(x.view(), w.view(), b.view(), 3)), tk);
            assert_eq!(dense(encode_topk(x.view(), w.view(), b.view(), 10)), relu);
        }
    }

    #[test]
    fn jumprelu_boundary_is_strict() {
        let pre = array![0.5, 0.2];
        let theta = array![0.5, 0.0];
        assert_eq!(jumprelu_of(pre.view(), theta.view()), vec![(1, 0.2)]);
    }

    #[test]
    fn topk_keeps_largest() {
        let pre = array![5.0, 1.0, 3.0];
        assert_eq!(topk_of(pre.view(), 2), vec![(0, 5.0), (2, 3.0)]);
    }

    #[test]
    fn batchtopk_global_selection() {
        let w = Array2::<f64>::eye(3);
        let b = Array1::zeros(3);
        let same = array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]];
        let z = encode_batchtopk(same.view(), w.view(), b.view(), 1);
        assert_eq!(z[0], z[1]);
        let dom = array![[10.0, 9.0, 8.0], [1.0, 0.0, 0.0]];
        let z = encode_batchtopk(dom.view(), w.view(), b.view(), 1);
        assert_eq!(z[0].len(), 2);
        assert!(z[1].is_empty());
    }

    #[test]
    fn batchtopk_matches_flatten_sort() {
        let mut rng = crate::rng::SeedStream::new(4).rng("btk", 0);
        let w = Array2::from_shape_fn((8, 3), |_| rng.random_range(-1.0..1.0));
        let b = Array1::zeros(8);
        let x = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let pre = x.dot(&w.t());
        let mut flat: Vec<f64> = pre.iter().copied().filter(|v| *v > 0.0).collect();
        flat.sort_by(|a, b| b.total_cmp(a));
        let cut = flat.get(5 * 2 - 1).copied().unwrap_or(0.0);
        let z = encode_batchtopk(x.view(), w.view(), b.view(), 2);
        for (r, row) in z.iter().enumerate() {
            for j in 0..8 {
                let kept = row.iter().any(|e| e.0 == j);
                assert_eq!(kept, pre[[r, j]] > 0.0 && pre[[r, j]] >= cut);
            }
        }
    }

    #[test]
    fn decode_cases() {
        let d = random_atoms(5, 4, 3);
        assert_eq!(decode(&[], d.view()), Array1::<f64>::zeros(3));
        assert_eq!(decode(&[(2, 1.0)], d.view()), d.row(2).to_owned());
        let z = [(0, 0.5), (3, -2.0)];
        let mut dense = Array1::<f64>::zeros(4);
        dense[0] = 0.5;
        dense[3] = -2.0;
        let oracle = dense.dot(&d);
        for (a, b) in decode(&z, d.view()).iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
