//! Linear probes trained by full-batch gradient descent, scored on the
//! training data (a separability measurement, not a generalization estimate).

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

const MAX_ITER: usize = 2000;
const GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub weights: Array1<f64>,
    pub bias: f64,
}

/// Binary logistic regression with a bias term and no regularization.
pub fn logistic_probe(x: ArrayView2<f64>, y: &[bool]) -> Result<ProbeResult> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", y.len())));
    }
    let pos = y.iter().filter(|b| **b).count();
    if pos == 0 || pos == n {
        return Err(Error::SingleClass);
    }
    let t: Array1<f64> = y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    // Lipschitz bound of the mean logistic loss gradient.
    let lip = x.rows().into_iter().map(|r| r.dot(&r) + 1.0).sum::<f64>() / (4.0 * n as f64);
    let step = 1.0 / lip;
    let mut w = Array1::<f64>::zeros(x.ncols());
    let mut b = 0.0;
    let mut acc = 0.0;
    for _ in 0..MAX_ITER {
        let logits = x.dot(&w) + b;
        acc = accuracy(&logits, y);
        let resid = logits.mapv(sigmoid) - &t;
        let gw = x.t().dot(&resid) / n as f64;
        let gb = resid.sum() / n as f64;
        let gnorm = (gw.dot(&gw) + gb * gb).sqrt();
        if gnorm < GRAD_TOL {
            break;
        }
        w.scaled_add(-step, &gw);
        b -= step * gb;
    }
    let logits = x.dot(&w) + b;
    acc = acc.max(accuracy(&logits, y));
    Ok(ProbeResult {
        accuracy: acc,
        weights: w,
        bias: b,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn accuracy(logits: &Array1<f64>, y: &[bool]) -> f64 {
    let hits = logits.iter().zip(y).filter(|(l, t)| (**l > 0.0) == **t).count();
    hits as f64 / y.len() as f64
}

#[derive(Debug, Clone)]
pub struct MultinomialResult {
    pub top1: f64,
    pub top5: f64,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Softmax regression over `n_classes`; labels are class indices.
pub fn multinomial_probe(x: ArrayView2<f64>, labels: &[usize]) -> Result<MultinomialResult> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let distinct = {
        let mut seen = vec![false; n_classes];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|s| **s).count()
    };
    if distinct < 2 {
        return Err(Error::SingleClass);
    }
    let lip = x.rows().into_iter().map(|r| r.dot(&r) + 1.0).sum::<f64>() / (2.0 * n as f64);
    let step = 1.0 / lip;
    let mut w = Array2::<f64>::zeros((x.ncols(), n_classes));
    let mut b = Array1::<f64>::zeros(n_classes);
    for _ in 0..MAX_ITER {
        let mut p = x.dot(&w) + &b;
        softmax_rows(&mut p);
        for (i, &l) in labels.iter().enumerate() {
            p[[i, l]] -= 1.0;
        }
        let gw = x.t().dot(&p) / n as f64;
        let gb = p.sum_axis(Axis(0)) / n as f64;
        let gnorm = (gw.iter().map(|v| v * v).sum::<f64>() + gb.dot(&gb)).sqrt();
        if gnorm < GRAD_TOL {
            break;
        }
        w.scaled_add(-step, &gw);
        b.scaled_add(-step, &gb);
    }
    let logits = x.dot(&w) + &b;
    let (top1, top5) = topk_accuracy(logits.view(), labels);
    Ok(MultinomialResult {
        top1,
        top5,
        weights: w,
        bias: b,
    })
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        row.mapv_inplace(|v| (v - mx).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Top-1 and top-5 accuracy of per-row scores. Ties rank the lower class first.
pub fn topk_accuracy(scores: ArrayView2<f64>, labels: &[usize]) -> (f64, f64) {
    let n = labels.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let (mut h1, mut h5) = (0usize, 0usize);
    for (row, &l) in scores.rows().into_iter().zip(labels) {
        let s = row[l];
        let rank = row
            .iter()
            .enumerate()
            .filter(|(j, v)| **v > s || (**v == s && *j < l))
            .count();
        h1 += usize::from(rank < 1);
        h5 += usize::from(rank < 5);
    }
    (h1 as f64 / n as f64, h5 as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blobs(seed: u64, n: usize, d: usize, sep: f64) -> (Array2<f64>, Vec<bool>) {
        let mut rng = crate::rng::SeedStream::new(seed).rng("blobs", 0);
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let x = Array2::from_shape_fn((n, d), |(i, j)| {
            let z: f64 = rng.sample(StandardNormal);
            z + if j == 0 && y[i] { sep } else { 0.0 }
        });
        (x, y)
    }

    #[test]
    fn separable_blobs_are_perfectly_classified() {
        let (x, y) = blobs(1, 200, 5, 20.0);
        assert_eq!(logistic_probe(x.view(), &y).unwrap().accuracy, 1.0);
    }

    #[test]
    fn identical_distributions_are_near_chance() {
        let mut mean = 0.0;
        for seed in 0..10 {
            let (x, y) = blobs(seed, 2000, 3, 0.0);
            mean += logistic_probe(x.view(), &y).unwrap().accuracy;
        }
        mean /= 10.0;
        assert!((mean - 0.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn single_class_is_rejected() {
        let (x, _) = blobs(1, 10, 2, 0.0);
        assert!(matches!(logistic_probe(x.view(), &[true; 10]), Err(Error::SingleClass)));
        assert!(matches!(multinomial_probe(x.view(), &[3; 10]), Err(Error::SingleClass)));
    }

    #[test]
    fn multinomial_separates_and_hits_chance_when_shuffled() {
        let mut rng = crate::rng::SeedStream::new(2).rng("mn", 0);
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let x = Array2::from_shape_fn((300, 4), |(i, j)| {
            let z: f64 = rng.sample(StandardNormal);
            z * 0.1 + if j == labels[i] { 5.0 } else { 0.0 }
        });
        assert_eq!(multinomial_probe(x.view(), &labels).unwrap().top1, 1.0);

        let noise = Array2::from_shape_fn((3000, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let labels: Vec<usize> = (0..3000).map(|_| rng.random_range(0..3)).collect();
        let r = multinomial_probe(noise.view(), &labels).unwrap();
        assert!((r.top1 - 1.0 / 3.0).abs() < 0.05, "{}", r.top1);
    }
}
