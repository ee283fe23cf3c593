//! Retrieval and classification scores on embeddings.

use ndarray::{Array2, ArrayView2};

use crate::datastore::{EmbeddingDataset, SparseCode};
use crate::error::{Error, Result};
use crate::linalg::normalize_rows_lenient;
use crate::sae::SaeModel;
use crate::solvers::{multinomial_probe, topk_accuracy};

use super::ModalityStructure;

/// Batch size for recall.
pub const RECALL_BATCH: usize = 256;

/// Whether column `i` of row `i` ranks within the top `k` of that row.
/// Ties go to the lower column index.
fn hit(row: ndarray::ArrayView1<f64>, i: usize, k: usize) -> bool {
    let s = row[i];
    let above = row
        .iter()
        .enumerate()
        .filter(|(j, v)| **v > s || (**v == s && *j < i))
        .count();
    above < k
}

fn recall_batch(i: ArrayView2<f64>, t: ArrayView2<f64>, k: usize) -> f64 {
    let c = i.dot(&t.t());
    let b = c.nrows();
    let img: usize = (0..b).filter(|&r| hit(c.row(r), r, k)).count();
    let txt: usize = (0..b).filter(|&r| hit(c.column(r), r, k)).count();
    (img + txt) as f64 / (2 * b) as f64
}

/// Symmetric recall@k over consecutive batches of `batch` pairs. Rows are
/// normalized first. A trailing partial batch is dropped unless it is the
/// only one.
pub fn recall_at_k(img: ArrayView2<f64>, txt: ArrayView2<f64>, k: usize, batch: usize) -> Result<f64> {
    if img.dim() != txt.dim() {
        return Err(Error::PairingMismatch { rows_a: img.nrows(), rows_b: txt.nrows(), offset: 0 });
    }
    if k == 0 || batch == 0 {
        return Err(Error::Config("k and the batch size must be positive".into()));
    }
    let n = img.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let i = normalize_rows_lenient(img);
    let t = normalize_rows_lenient(txt);
    let (size, count) = if n < batch { (n, 1) } else { (batch, n / batch) };
    let total: f64 = (0..count)
        .map(|c| {
            let r = c * size..(c + 1) * size;
            recall_batch(i.slice(ndarray::s![r.clone(), ..]), t.slice(ndarray::s![r, ..]), k)
        })
        .sum();
    Ok(total / count as f64)
}

/// Reconstructions `(Z D, (Z ⊙ δ) D)` for one set of codes.
fn full_and_bimodal(z: &SparseCode, model: &SaeModel, ms: &ModalityStructure) -> Result<(Array2<f64>, Array2<f64>)> {
    Ok((z.reconstruct(&model.dictionary)?, z.masked(&ms.delta)?.reconstruct(&model.dictionary)?))
}

/// recall@1 of full reconstructions minus recall@1 of bimodal-only
/// reconstructions.
pub fn delta_recall(ds: &EmbeddingDataset, model: &SaeModel, ms: &ModalityStructure) -> Result<f64> {
    let (zi, zt) = model.encode_pair(ds);
    let (fi, bi) = full_and_bimodal(&zi, model, ms)?;
    let (ft, bt) = full_and_bimodal(&zt, model, ms)?;
    Ok(recall_at_k(fi.view(), ft.view(), 1, RECALL_BATCH)? - recall_at_k(bi.view(), bt.view(), 1, RECALL_BATCH)?)
}

/// Top-1 and top-5 accuracy.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Accuracy {
    pub top1: f64,
    pub top5: f64,
}

/// Nearest class prototype, where a prototype is the normalized mean of the
/// class's text embeddings.
pub fn zero_shot_accuracy(img: ArrayView2<f64>, labels: &[usize], class_texts: &[Array2<f64>]) -> Result<Accuracy> {
    if labels.len() != img.nrows() {
        return Err(Error::Shape(format!("{} labels for {} images", labels.len(), img.nrows())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= class_texts.len()) {
        return Err(Error::MissingClass(l));
    }
    let d = img.ncols();
    let mut protos = Array2::zeros((class_texts.len(), d));
    for (c, t) in class_texts.iter().enumerate() {
        if t.nrows() == 0 {
            return Err(Error::MissingClass(c));
        }
        if t.ncols() != d {
            return Err(Error::Shape(format!("class {c} texts have dimension {}", t.ncols())));
        }
        protos.row_mut(c).assign(&crate::linalg::column_mean(t.view()));
    }
    let protos = normalize_rows_lenient(protos.view());
    let imgs = normalize_rows_lenient(img);
    let (top1, top5) = topk_accuracy(imgs.dot(&protos.t()).view(), labels);
    Ok(Accuracy { top1, top5 })
}

/// Training accuracy of a softmax classifier fitted on the images.
pub fn classifier_accuracy(img: ArrayView2<f64>, labels: &[usize]) -> Result<Accuracy> {
    let r = multinomial_probe(img, labels)?;
    Ok(Accuracy { top1: r.top1, top5: r.top5 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn orthonormal_identity_recall() {
        let i = Array2::<f64>::eye(4);
        assert_eq!(recall_at_k(i.view(), i.view(), 1, 256).unwrap(), 1.0);
    }

    #[test]
    fn swapped_pair_recall() {
        let i = Array2::<f64>::eye(3);
        // text rows 0 and 1 swapped
        let t = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        // image side: only row 2 correct (1/3); text side likewise
        assert!((recall_at_k(i.view(), t.view(), 1, 256).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(recall_at_k(i.view(), t.view(), 2, 256).unwrap(), 1.0);
        let t2 = array![[0.9, 0.1, 0.0], [0.8, 0.2, 0.0], [0.0, 0.0, 1.0]];
        // C = t2 (rows normalized); image 0 → col 0 (correct), image 1 → col 0 (wrong), image 2 ok
        // text 0 → row 0 best (correct), text 1 → row 0 vs row 1: 0.8/|t1| vs 0.2/|t1| → row 0 (wrong), text 2 ok
        let oracle = {
            let tn = normalize_rows_lenient(t2.view());
            let c = i.dot(&tn.t());
            let mut hits = 0;
            for r in 0..3 {
                let best_img = (0..3).max_by(|&a, &b| c[[r, a]].total_cmp(&c[[r, b]]).then(b.cmp(&a))).unwrap();
                let best_txt = (0..3).max_by(|&a, &b| c[[a, r]].total_cmp(&c[[b, r]]).then(b.cmp(&a))).unwrap();
                hits += usize::from(best_img == r) + usize::from(best_txt == r);
            }
            hits as f64 / 6.0
        };
        assert!((recall_at_k(i.view(), t2.view(), 1, 256).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn recall_batches_drop_remainder() {
        let i = Array2::<f64>::eye(5);
        let mut t = i.clone();
        t.swap((4, 4), (4, 3));
        // batches of 2: rows {0,1} and {2,3}; row 4 dropped
        assert_eq!(recall_at_k(i.view(), t.view(), 1, 2).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn recall_invariant_under_rotation(seed in 0u64..200) {
            let mut rng = crate::rng::SeedStream::new(seed).rng("rot", 0);
            let i = Array2::from_shape_fn((12, 4), |_| rng.random_range(-1.0..1.0));
            let t = &i + &Array2::from_shape_fn((12, 4), |_| rng.random_range(-0.8..0.8));
            let q = crate::linalg::random_orthogonal(&mut rng, 4);
            let r0 = recall_at_k(i.view(), t.view(), 1, 256).unwrap();
            let r1 = recall_at_k(i.dot(&q).view(), t.dot(&q).view(), 1, 256).unwrap();
            prop_assert!((r0 - r1).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_shot_one_hot() {
        let img = Array2::<f64>::eye(3);
        let texts = vec![array![[1.0, 0.0, 0.0]], array![[0.0, 2.0, 0.0], [0.0, 1.0, 0.0]], array![[0.0, 0.0, 1.0]]];
        let acc = zero_shot_accuracy(img.view(), &[0, 1, 2], &texts).unwrap();
        assert_eq!(acc.top1, 1.0);
        assert!(matches!(zero_shot_accuracy(img.view(), &[0, 1, 3], &texts), Err(Error::MissingClass(3))));
        let bad = vec![texts[0].clone(), Array2::zeros((0, 3)), texts[2].clone()];
        assert!(matches!(zero_shot_accuracy(img.view(), &[0, 1, 2], &bad), Err(Error::MissingClass(1))));
    }

    #[test]
    fn zero_shot_shuffled_labels_near_chance() {
        let mut rng = crate::rng::SeedStream::new(3).rng("zs", 0);
        let c = 10;
        let texts: Vec<Array2<f64>> = (0..c).map(|k| {
            let mut e = Array2::zeros((1, c));
            e[[0, k]] = 1.0;
            e
        }).collect();
        let n = 5000;
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let img = Array2::from_shape_fn((n, c), |(r, j)| if truth[r] == j { 1.0 } else { 0.0 });
        let shuffled: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let acc = zero_shot_accuracy(img.view(), &shuffled, &texts).unwrap();
        assert!((acc.top1 - 0.1).abs() < 0.02, "{}", acc.top1);
    }

    #[test]
    fn classifier_separable_and_single_class() {
        let img = array![[2.0, 0.0], [2.1, 0.1], [0.0, 2.0], [0.1, 2.1], [-2.0, -2.0], [-2.1, -1.9]];
        let acc = classifier_accuracy(img.view(), &[0, 0, 1, 1, 2, 2]).unwrap();
        assert_eq!(acc.top1, 1.0);
        assert!(matches!(classifier_accuracy(img.view(), &[0; 6]), Err(Error::SingleClass)));
    }

    #[test]
    fn classifier_identical_clouds_near_chance() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = crate::rng::SeedStream::new(8).rng("cls", 0);
        let n = 3000;
        let img = Array2::from_shape_fn((n, 2), |_| -> f64 { StandardNormal.sample(&mut rng) });
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let acc = classifier_accuracy(img.view(), &labels).unwrap();
        assert!(acc.top1 < 0.40, "{}", acc.top1);
    }
}
