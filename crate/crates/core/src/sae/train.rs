//! Minibatch training with Adam and an optional alignment penalty.
//!
//! Loss per batch of `b` pairs (`2b` rows, both domains):
//! `Σ‖x − x̂‖² / (2b·d) + sparsity + β · align`.
//! Gradients are accumulated per fixed-size chunk of pairs and summed in chunk
//! order, so results do not depend on the thread count.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encode::{self, mp_trace, pre_activation, MpTrace};
use super::{cosine_and_grads, evaluate_reconstruction, align_loss, SaeKind, SaeModel, TrainConfig};
use crate::datastore::{Dictionary, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::SeedStream;

const CHUNK: usize = 64;
const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean minibatch objective over the epoch.
    pub train_loss: f64,
    pub mse: f64,
    pub r2: f64,
    pub l0: f64,
    pub l1: f64,
    pub align: f64,
    pub reinitialized: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }
}

/// Raw trainable state. Dictionary rows are kept unit norm by the optimizer
/// but nothing here enforces it, which the gradient checks rely on.
#[derive(Debug, Clone)]
pub(crate) struct Params {
    pub kind: SaeKind,
    pub dict: Array2<f64>,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub theta: Array1<f64>,
    pub kappa: usize,
    pub l1_weight: f64,
    pub bandwidth: f64,
}

impl Params {
    fn from_model(m: &SaeModel, bandwidth: f64) -> Self {
        Self {
            kind: m.kind,
            dict: m.dictionary.atoms().to_owned(),
            w: m.enc_weight.clone(),
            b: m.enc_bias.clone(),
            theta: m.thresholds.clone(),
            kappa: m.kappa,
            l1_weight: m.l1_weight,
            bandwidth,
        }
    }

    fn to_model(&self) -> Result<SaeModel> {
        Ok(SaeModel {
            kind: self.kind,
            dictionary: Dictionary::from_unnormalized(self.dict.view())?,
            enc_weight: self.w.clone(),
            enc_bias: self.b.clone(),
            thresholds: self.theta.clone(),
            kappa: self.kappa,
            l1_weight: self.l1_weight,
        })
    }

    fn zeros_like(&self) -> Grads {
        Grads {
            dict: Array2::zeros(self.dict.raw_dim()),
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
            theta: Array1::zeros(self.theta.raw_dim()),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Grads {
    pub dict: Array2<f64>,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub theta: Array1<f64>,
}

impl Grads {
    fn add(&mut self, o: &Grads) {
        self.dict += &o.dict;
        self.w += &o.w;
        self.b += &o.b;
        self.theta += &o.theta;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct LossParts {
    pub mse: f64,
    pub sparsity: f64,
    pub align: f64,
    pub total: f64,
}

struct RowForward {
    code: Vec<(usize, f64)>,
    recon: Array1<f64>,
    pre: Option<Array1<f64>>,
    trace: Option<MpTrace>,
}

fn forward_domain(p: &Params, x: ArrayView2<f64>, gram: Option<&Array2<f64>>) -> Vec<RowForward> {
    let mut rows: Vec<RowForward> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            match p.kind {
                SaeKind::Mp => {
                    let trace = mp_trace(xi, p.dict.view(), gram.map(|g| g.view()), p.kappa);
                    RowForward { code: trace.code(), recon: Array1::zeros(0), pre: None, trace: Some(trace) }
                }
                _ => {
                    let pre = pre_activation(xi, p.w.view(), p.b.view());
                    let code = match p.kind {
                        SaeKind::Relu => encode::relu_of(pre.view()),
                        SaeKind::JumpRelu => encode::jumprelu_of(pre.view(), p.theta.view()),
                        SaeKind::TopK => encode::topk_of(pre.view(), p.kappa),
                        _ => Vec::new(),
                    };
                    RowForward { code, recon: Array1::zeros(0), pre: Some(pre), trace: None }
                }
            }
        })
        .collect();
    if p.kind == SaeKind::BatchTopK {
        let pre: Vec<Array1<f64>> = rows.iter_mut().map(|r| r.pre.take().expect("affine")).collect();
        let codes = encode::batchtopk_of(&pre, p.kappa);
        for ((r, c), a) in rows.iter_mut().zip(codes).zip(pre) {
            r.code = c;
            r.pre = Some(a);
        }
    }
    rows.par_iter_mut()
        .for_each(|r| r.recon = encode::decode(&r.code, p.dict.view()));
    rows
}

fn dense(code: &[(usize, f64)], k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    for &(j, z) in code {
        v[j] = z;
    }
    v
}

/// Backpropagates one row into `g`. `gz_ext` is the loss gradient with
/// respect to the code coming from everything except reconstruction.
fn backward_row(p: &Params, x: ArrayView1<f64>, f: &RowForward, g_xhat: &Array1<f64>, gz_ext: &[f64], sparsity_scale: f64, g: &mut Grads) {
    match p.kind {
        SaeKind::Mp => {
            // x̂ = x − r_κ, and r_t = r_{t−1} − α_t D_i with α_t = D_i · r_{t−1};
            // the selected indices are held fixed.
            let trace = f.trace.as_ref().expect("mp forward keeps its trace");
            let mut gr: Array1<f64> = -g_xhat;
            for (t, &(i, alpha)) in trace.steps.iter().enumerate().rev() {
                let di = p.dict.row(i);
                let r_prev = &trace.residuals[t];
                let g_alpha = gz_ext[i] - di.dot(&gr);
                let mut gdi = g.dict.row_mut(i);
                gdi.scaled_add(-alpha, &gr);
                gdi.scaled_add(g_alpha, r_prev);
                gr.scaled_add(g_alpha, &di);
            }
        }
        _ => {
            let pre = f.pre.as_ref().expect("affine forward keeps its pre-activation");
            for &(j, z) in &f.code {
                let dj = p.dict.row(j);
                g.dict.row_mut(j).scaled_add(z, g_xhat);
                let mut gz = gz_ext[j] + dj.dot(g_xhat);
                if p.kind == SaeKind::Relu {
                    gz += sparsity_scale * z.signum();
                }
                g.w.row_mut(j).scaled_add(gz, &x);
                g.b[j] += gz;
            }
            if p.kind == SaeKind::JumpRelu {
                // Rectangle-kernel straight-through estimate of ∂H(a − θ)/∂θ.
                let eps = p.bandwidth;
                for j in 0..pre.len() {
                    let u = (pre[j] - p.theta[j]) / eps;
                    if u.abs() < 0.5 {
                        let gz = gz_ext[j] + p.dict.row(j).dot(g_xhat);
                        g.theta[j] += -gz * p.theta[j] / eps - sparsity_scale / eps;
                    }
                }
            }
        }
    }
}

/// Objective and gradient for one batch of pairs.
pub(crate) fn batch_loss_and_grad(p: &Params, xa: ArrayView2<f64>, xb: ArrayView2<f64>, beta: f64) -> (LossParts, Grads, Vec<usize>) {
    let b = xa.nrows();
    let d = xa.ncols();
    let k = p.dict.nrows();
    let gram = (p.kind == SaeKind::Mp).then(|| p.dict.dot(&p.dict.t()));
    let fa = forward_domain(p, xa, gram.as_ref());
    let fb = forward_domain(p, xb, gram.as_ref());
    let rows = 2.0 * b as f64;
    let mse_scale = 1.0 / (rows * d as f64);
    let sparsity_scale = p.l1_weight / rows;

    let chunks: Vec<(LossParts, Grads)> = (0..b)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut g = p.zeros_like();
            let mut lp = LossParts::default();
            for &i in idx {
                let (za, zb) = (dense(&fa[i].code, k), dense(&fb[i].code, k));
                let (cos, ga, gb) = if beta > 0.0 {
                    cosine_and_grads(&za, &zb)
                } else {
                    (0.0, vec![0.0; k], vec![0.0; k])
                };
                lp.align -= cos / b as f64;
                for (x, f, gext) in [(xa.row(i), &fa[i], ga), (xb.row(i), &fb[i], gb)] {
                    let diff = &f.recon - &x;
                    lp.mse += diff.dot(&diff) * mse_scale;
                    lp.sparsity += match p.kind {
                        SaeKind::Relu => sparsity_scale * f.code.iter().map(|e| e.1.abs()).sum::<f64>(),
                        SaeKind::JumpRelu => sparsity_scale * f.code.len() as f64,
                        _ => 0.0,
                    };
                    let g_xhat = diff * (2.0 * mse_scale);
                    let gz_ext: Vec<f64> = gext.iter().map(|v| -beta * v / b as f64).collect();
                    backward_row(p, x, f, &g_xhat, &gz_ext, sparsity_scale, &mut g);
                }
            }
            (lp, g)
        })
        .collect();

    let mut grads = p.zeros_like();
    let mut lp = LossParts::default();
    for (l, g) in &chunks {
        lp.mse += l.mse;
        lp.sparsity += l.sparsity;
        lp.align += l.align;
        grads.add(g);
    }
    lp.total = lp.mse + lp.sparsity + beta * lp.align;

    let mut counts = vec![0usize; k];
    for f in fa.iter().chain(&fb) {
        for &(j, _) in &f.code {
            counts[j] += 1;
        }
    }
    (lp, grads, counts)
}

struct Adam {
    m: Grads,
    v: Grads,
    t: i32,
}

impl Adam {
    fn new(p: &Params) -> Self {
        Self { m: p.zeros_like(), v: p.zeros_like(), t: 0 }
    }

    fn step(&mut self, p: &mut Params, g: &Grads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_B1.powi(self.t);
        let c2 = 1.0 - ADAM_B2.powi(self.t);
        let update = |w: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for i in 0..w.len() {
                m[i] = ADAM_B1 * m[i] + (1.0 - ADAM_B1) * g[i];
                v[i] = ADAM_B2 * v[i] + (1.0 - ADAM_B2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        };
        update(
            p.dict.as_slice_mut().expect("standard layout"),
            self.m.dict.as_slice_mut().expect("standard layout"),
            self.v.dict.as_slice_mut().expect("standard layout"),
            g.dict.as_slice().expect("standard layout"),
        );
        update(
            p.w.as_slice_mut().expect("standard layout"),
            self.m.w.as_slice_mut().expect("standard layout"),
            self.v.w.as_slice_mut().expect("standard layout"),
            g.w.as_slice().expect("standard layout"),
        );
        update(
            p.b.as_slice_mut().expect("standard layout"),
            self.m.b.as_slice_mut().expect("standard layout"),
            self.v.b.as_slice_mut().expect("standard layout"),
            g.b.as_slice().expect("standard layout"),
        );
        update(
            p.theta.as_slice_mut().expect("standard layout"),
            self.m.theta.as_slice_mut().expect("standard layout"),
            self.v.theta.as_slice_mut().expect("standard layout"),
            g.theta.as_slice().expect("standard layout"),
        );
    }

    fn reset_atom(&mut self, j: usize) {
        for s in [&mut self.m, &mut self.v] {
            s.dict.row_mut(j).fill(0.0);
            if s.w.nrows() > j {
                s.w.row_mut(j).fill(0.0);
                s.b[j] = 0.0;
            }
            if s.theta.len() > j {
                s.theta[j] = 0.0;
            }
        }
    }
}

fn project(p: &mut Params) {
    for mut row in p.dict.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    p.theta.mapv_inplace(|t| t.max(0.0));
}

/// Fresh model: random unit atoms, encoder tied to the dictionary, zero bias.
pub fn init_model(d: usize, cfg: &TrainConfig) -> Result<SaeModel> {
    cfg.validate(d)?;
    let k = cfg.atoms_for(d);
    let mut rng = SeedStream::new(cfg.seed).rng("sae-init", 0);
    let mut atoms = Array2::zeros((k, d));
    for mut row in atoms.rows_mut() {
        row.assign(&linalg::random_unit(&mut rng, d));
    }
    let dictionary = Dictionary::new(atoms.clone())?;
    let (enc_weight, enc_bias) = if cfg.kind.has_encoder() {
        (atoms, Array1::zeros(k))
    } else {
        (Array2::zeros((0, 0)), Array1::zeros(0))
    };
    let thresholds = if cfg.kind == SaeKind::JumpRelu {
        Array1::from_elem(k, cfg.threshold_init)
    } else {
        Array1::zeros(0)
    };
    Ok(SaeModel {
        kind: cfg.kind,
        dictionary,
        enc_weight,
        enc_bias,
        thresholds,
        kappa: cfg.target_l0,
        l1_weight: cfg.l1_weight,
    })
}

/// Trains a fresh model on `ds`.
pub fn train(ds: &EmbeddingDataset, cfg: &TrainConfig) -> Result<(SaeModel, TrainLog)> {
    let model = init_model(ds.dim(), cfg)?;
    train_from(model, ds, cfg)
}

/// Continues training `model` on `ds`.
pub fn train_from(model: SaeModel, ds: &EmbeddingDataset, cfg: &TrainConfig) -> Result<(SaeModel, TrainLog)> {
    cfg.validate(ds.dim())?;
    model.validate()?;
    if model.dim() != ds.dim() {
        return Err(Error::Shape(format!("model dim {} vs data dim {}", model.dim(), ds.dim())));
    }
    if ds.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let n = ds.len();
    let k = model.n_atoms();
    let stream = SeedStream::new(cfg.seed);
    let mut p = Params::from_model(&model, cfg.jump_bandwidth);
    let mut adam = Adam::new(&p);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..n).collect();
    let xa_all = ds.domain_a();
    let xb_all = ds.domain_b();
    let total_steps = (cfg.epochs * n.div_ceil(cfg.batch_size)).max(1) as f64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream.rng("shuffle", epoch as u64));
        let mut fired = vec![0usize; k];
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let xa = xa_all.select(Axis(0), batch);
            let xb = xb_all.select(Axis(0), batch);
            let (lp, grads, counts) = batch_loss_and_grad(&p, xa.view(), xb.view(), cfg.beta_align);
            if !lp.total.is_finite() {
                return Err(Error::Divergence { step: log.steps });
            }
            let lr = if cfg.cosine_decay {
                0.5 * cfg.learning_rate * (1.0 + (std::f64::consts::PI * log.steps as f64 / total_steps).cos())
            } else {
                cfg.learning_rate
            };
            adam.step(&mut p, &grads, lr);
            project(&mut p);
            if p.dict.iter().chain(&p.w).chain(&p.b).any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step: log.steps });
            }
            for (f, c) in fired.iter_mut().zip(counts) {
                *f += c;
            }
            loss_sum += lp.total;
            batches += 1;
            log.steps += 1;
        }

        let mut reinitialized = 0;
        if cfg.reinit_dead && epoch + 1 < cfg.epochs {
            let dead: Vec<usize> = (0..k).filter(|&j| fired[j] == 0).collect();
            if !dead.is_empty() {
                reinit_atoms(&mut p, &mut adam, &dead, ds, cfg, &stream, epoch)?;
                reinitialized = dead.len();
            }
        }

        let current = p.to_model()?;
        let stats = evaluate_reconstruction(&current, ds)?;
        let (za, zb) = current.encode_pair(ds);
        log.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            mse: stats.mse,
            r2: stats.r2,
            l0: stats.l0,
            l1: stats.l1,
            align: align_loss(&za, &zb)?,
            reinitialized,
        });
    }
    let mut out = p.to_model()?;
    if out.kind == SaeKind::Mp {
        orient_atoms(&mut out, ds)?;
    }
    Ok((out, log))
}

/// Matching pursuit is symmetric under `D_j → −D_j`; flip atoms whose
/// activations sum to a negative value so codes are mostly non-negative.
fn orient_atoms(model: &mut SaeModel, ds: &EmbeddingDataset) -> Result<()> {
    let (za, zb) = model.encode_pair(ds);
    let mut total = vec![0.0; model.n_atoms()];
    for z in [&za, &zb] {
        for (&j, &v) in z.indices().iter().zip(z.values()) {
            total[j] += v;
        }
    }
    if total.iter().all(|t| *t >= 0.0) {
        return Ok(());
    }
    let mut atoms = model.dictionary.atoms().to_owned();
    for (mut row, t) in atoms.rows_mut().into_iter().zip(&total) {
        if *t < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }
    let labels = model.dictionary.labels().map(<[String]>::to_vec);
    model.dictionary = Dictionary::new(atoms)?;
    if let Some(l) = labels {
        model.dictionary = model.dictionary.clone().with_labels(l)?;
    }
    Ok(())
}

/// Points each dead atom at the normalized residual of a random training row.
fn reinit_atoms(
    p: &mut Params,
    adam: &mut Adam,
    dead: &[usize],
    ds: &EmbeddingDataset,
    cfg: &TrainConfig,
    stream: &SeedStream,
    epoch: usize,
) -> Result<()> {
    let n = ds.len();
    let model = p.to_model()?;
    let mut rng = stream.rng("reinit", epoch as u64);
    let d = ds.dim();
    let picks: Vec<usize> = dead.iter().map(|_| rng.random_range(0..2 * n)).collect();
    let rows: Array2<f64> = Array2::from_shape_fn((picks.len(), d), |(r, c)| {
        let i = picks[r];
        if i < n { ds.domain_a()[[i, c]] } else { ds.domain_b()[[i - n, c]] }
    });
    let recon = model.reconstruct(rows.view());
    for (r, &j) in dead.iter().enumerate() {
        let mut v = &rows.row(r) - &recon.row(r);
        let nv = v.dot(&v).sqrt();
        if nv > 1e-8 {
            v /= nv;
        } else {
            v = linalg::random_unit(&mut rng, d);
        }
        p.dict.row_mut(j).assign(&v);
        if p.kind.has_encoder() {
            p.w.row_mut(j).assign(&v);
            p.b[j] = 0.0;
        }
        if p.kind == SaeKind::JumpRelu {
            p.theta[j] = cfg.threshold_init;
        }
        adam.reset_atom(j);
    }
    Ok(())
}
