use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{report, Cli, Command, Failure};
use crate::datastore::{
    load_dataset, load_dictionary, save_codes, save_dataset, save_dictionary, BinaryMask, EmbeddingDataset,
};
use crate::dgp::{build_ground_truth, mean_pair_cosine, sample_pairs, DgpConfig};
use crate::error::Error;
use crate::experiment::{run_experiment, ExperimentConfig};
use crate::interventions::{
    arithmetic_report, build_queries, gap_report, histogram, ood_distances, GapConfig, GapMethodKind, GapRemoval,
    QueryVariant, OOD_K,
};
use crate::metrics::{c_curves, dictionary_stats, infer_structure, modality_report, reconstruction_metrics};
use crate::sae::{evaluate_reconstruction, load_model, save_model, sweep_beta, train, SaeKind, SaeModel, TrainConfig};

type CmdResult = Result<(), Failure>;

/// Tolerance on the achieved mean pair cosine reported by `dgp`.
const CALIBRATION_TOL: f64 = 0.01;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpOptions {
    pub d: usize,
    pub k: usize,
    pub l: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub n: usize,
    pub block_dim: Option<usize>,
    pub seed: u64,
}

impl Default for DgpOptions {
    fn default() -> Self {
        let c = DgpConfig::default();
        Self { d: c.d, k: c.k, l: c.l, tau1: c.tau1, tau2: c.tau2, n: 50_000, block_dim: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub data: Option<PathBuf>,
    pub arch: SaeKind,
    pub expansion: f64,
    pub atoms: Option<usize>,
    pub l0: usize,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub l1_weight: f64,
    pub cosine_decay: bool,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            data: None,
            arch: c.kind,
            expansion: c.expansion_ratio,
            atoms: None,
            l0: c.target_l0,
            beta: c.beta_align,
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.learning_rate,
            l1_weight: c.l1_weight,
            cosine_decay: c.cosine_decay,
            seed: 0,
        }
    }
}

impl TrainOptions {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kind: self.arch,
            expansion_ratio: self.expansion,
            n_atoms: self.atoms,
            target_l0: self.l0,
            beta_align: self.beta,
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.lr,
            seed: self.seed,
            l1_weight: self.l1_weight,
            cosine_decay: self.cosine_decay,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    #[serde(flatten)]
    pub train: TrainOptions,
    pub grid: Vec<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { train: TrainOptions::default(), grid: crate::sae::DEFAULT_BETA_GRID.to_vec() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub metrics: Vec<String>,
    pub tau: Option<f64>,
    pub label: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { data: None, model: None, metrics: vec!["all".into()], tau: None, label: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InterveneOptions {
    pub method: Option<GapMethodKind>,
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub ref_data: Option<PathBuf>,
    pub tau: Option<f64>,
    pub directions: Option<PathBuf>,
    pub bins: usize,
    pub seed: u64,
}

impl Default for InterveneOptions {
    fn default() -> Self {
        Self { method: None, model: None, data: None, ref_data: None, tau: None, directions: None, bins: 20, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ArithOptions {
    pub src: Option<PathBuf>,
    pub delta: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub mask_data: Option<PathBuf>,
    pub tau: Option<f64>,
    pub k: usize,
    pub bins: usize,
}

impl Default for ArithOptions {
    fn default() -> Self {
        Self { src: None, delta: None, targets: None, model: None, mask_data: None, tau: None, k: OOD_K, bins: 20 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    pub input: Option<PathBuf>,
}

/// Merges defaults, the config file, the flags and the global seed.
fn resolve<T, F>(cli: &Cli, flags: &F) -> Result<T, Failure>
where
    T: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let file = match &cli.global.config {
        Some(p) => super::load_file(p, cli.command.name())?,
        None => Map::new(),
    };
    let mut flags = match serde_json::to_value(flags)? {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    if let Some(seed) = cli.global.seed {
        flags.insert("seed".into(), json!(seed));
    }
    super::merge(&T::default(), &file, &flags).map_err(|e| match e {
        Error::Json(j) => Failure::Usage(format!("invalid option value: {j}")),
        other => other.into(),
    })
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, Failure> {
    value.as_ref().ok_or_else(|| Failure::Usage(format!("{flag} is required")))
}

fn out_dir(cli: &Cli) -> Result<&Path, Failure> {
    let out = required(&cli.global.out, "--out")?;
    std::fs::create_dir_all(out)?;
    Ok(out)
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub(super) fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Dgp(f) => cmd_dgp(cli, resolve(cli, f)?),
        Command::Train(f) => cmd_train(cli, resolve(cli, f)?),
        Command::SweepBeta(f) => cmd_sweep(cli, resolve(cli, f)?),
        Command::Eval(f) => cmd_eval(cli, resolve(cli, f)?),
        Command::Intervene(f) => cmd_intervene(cli, resolve(cli, f)?),
        Command::Arith(f) => cmd_arith(cli, resolve(cli, f)?),
        Command::Experiment(f) => cmd_experiment(cli, resolve(cli, f)?),
        Command::Report(f) => cmd_report(cli, resolve(cli, f)?),
    }
}

fn cmd_dgp(cli: &Cli, o: DgpOptions) -> CmdResult {
    let out = out_dir(cli)?;
    let cfg = DgpConfig { d: o.d, k: o.k, l: o.l, tau1: o.tau1, tau2: o.tau2, seed: o.seed, block_dim: o.block_dim };
    let gt = build_ground_truth(&cfg)?;
    let sample = sample_pairs(&gt, o.n)?;
    let achieved = mean_pair_cosine(&sample.data);
    save_dataset(&sample.data, out.join("embeddings.emb"))?;
    save_dictionary(&gt.separated, out.join("separated.dict"))?;
    save_dictionary(&gt.combined, out.join("combined.dict"))?;
    save_codes(&sample.separated_img, out.join("separated_img.codes"))?;
    save_codes(&sample.separated_txt, out.join("separated_txt.codes"))?;
    save_codes(&sample.combined_img, out.join("combined_img.codes"))?;
    save_codes(&sample.combined_txt, out.join("combined_txt.codes"))?;
    let summary = json!({
        "config": o,
        "beta": gt.beta,
        "separated_atoms": gt.separated.len(),
        "combined_atoms": gt.combined.len(),
        "mean_pair_cosine": achieved,
        "calibrated": (achieved - o.tau2).abs() <= CALIBRATION_TOL,
    });
    write_json(&out.join("config.json"), &o)?;
    write_json(&out.join("dgp.json"), &summary)?;
    println!("mean pair cosine {achieved:.4} (target {:.4}), beta {:.6}", o.tau2, gt.beta);
    Ok(())
}

fn load_data(path: &Option<PathBuf>, flag: &str) -> Result<EmbeddingDataset, Failure> {
    Ok(load_dataset(required(path, flag)?)?)
}

fn load_sae(path: &Option<PathBuf>) -> Result<SaeModel, Failure> {
    Ok(load_model(required(path, "--model")?)?)
}

fn cmd_train(cli: &Cli, o: TrainOptions) -> CmdResult {
    let ds = load_data(&o.data, "--data")?;
    let out = out_dir(cli)?;
    let (model, log) = train(&ds, &o.train_config())?;
    let stats = evaluate_reconstruction(&model, &ds)?;
    save_model(&model, out.join("model.sae"))?;
    write_json(&out.join("config.json"), &o)?;
    write_json(&out.join("train.json"), &json!({ "config": o, "log": log, "reconstruction": stats }))?;
    println!("{} atoms, r2 {:.4}, l0 {:.2}", model.n_atoms(), stats.r2, stats.l0);
    Ok(())
}

fn cmd_sweep(cli: &Cli, o: SweepOptions) -> CmdResult {
    let ds = load_data(&o.train.data, "--data")?;
    let out = out_dir(cli)?;
    let report = sweep_beta(&ds, &o.train.train_config(), &o.grid)?;
    std::fs::write(out.join("sweep.csv"), report.to_csv())?;
    save_model(&report.chosen().model, out.join("model.sae"))?;
    write_json(&out.join("config.json"), &o)?;
    write_json(&out.join("sweep.json"), &json!({ "config": o, "sweep": report }))?;
    if report.warning {
        eprintln!("warning: every nonzero beta lost too much R²; kept beta = 0");
    }
    println!("chosen beta {:e}", report.chosen_beta);
    Ok(())
}

const METRIC_GROUPS: [&str; 4] = ["reconstruction", "modality", "structure", "ccurves"];

fn cmd_eval(cli: &Cli, o: EvalOptions) -> CmdResult {
    let ds = load_data(&o.data, "--data")?;
    let model = load_sae(&o.model)?;
    let out = out_dir(cli)?;
    let all = o.metrics.iter().any(|m| m == "all");
    if let Some(bad) = o.metrics.iter().find(|m| *m != "all" && !METRIC_GROUPS.contains(&m.as_str())) {
        return Err(Failure::Usage(format!("unknown metric group {bad:?}")));
    }
    let want = |g: &str| all || o.metrics.iter().any(|m| m == g);
    let label = o.label.clone().unwrap_or_else(|| {
        o.model.as_ref().and_then(|p| p.file_stem()).map_or("model".into(), |s| s.to_string_lossy().into_owned())
    });
    let mut report = Map::new();
    report.insert("label".into(), json!(label));
    report.insert("config".into(), serde_json::to_value(&o)?);
    if want("reconstruction") {
        report.insert("reconstruction".into(), serde_json::to_value(reconstruction_metrics(&model, &ds)?)?);
    }
    if want("modality") {
        report.insert("modality".into(), serde_json::to_value(modality_report(&ds, &model, o.tau)?)?);
    }
    if want("structure") {
        let (zi, zt) = model.encode_pair(&ds);
        report.insert("structure".into(), serde_json::to_value(dictionary_stats(&model.dictionary, &zi.vstack(&zt)?)?)?);
    }
    if want("ccurves") {
        report.insert("ccurves".into(), serde_json::to_value(c_curves(&ds, &model)?)?);
    }
    let report = Value::Object(report);
    write_json(&out.join("config.json"), &o)?;
    write_json(&out.join("report.json"), &report)?;
    std::fs::write(out.join("table.csv"), report::render_table(&[(label, report)]))?;
    Ok(())
}

fn cmd_intervene(cli: &Cli, o: InterveneOptions) -> CmdResult {
    let method = *required(&o.method, "--method")?;
    let data = load_data(&o.data, "--data")?;
    let reference = match &o.ref_data {
        Some(_) => load_data(&o.ref_data, "--ref-data")?,
        None => data.clone(),
    };
    let model = match &o.model {
        Some(_) => Some(load_sae(&o.model)?),
        None => None,
    };
    let out = out_dir(cli)?;
    // Baselines act on reconstructions when a model is given, so every
    // method starts from the same embeddings.
    let recon = |ds: &EmbeddingDataset| -> Result<EmbeddingDataset, Failure> {
        match &model {
            Some(m) => {
                let (a, b) = (m.reconstruct(ds.domain_a()), m.reconstruct(ds.domain_b()));
                Ok(EmbeddingDataset::new(a, b, ds.meta())?)
            }
            None => Ok(ds.clone()),
        }
    };
    let before = recon(&data)?;
    let transform = match method {
        GapMethodKind::BimodalFilter => {
            let m = model.clone().ok_or_else(|| Failure::Usage("bimodal_filter needs --model".into()))?;
            let (ms, _) = infer_structure(&reference, &m, o.tau)?;
            GapRemoval::bimodal_filter(m, ms.delta)?
        }
        kind => {
            let mut g = GapRemoval::new(kind).with_seed(o.seed);
            if kind == GapMethodKind::ProjectSpan {
                let path = required(&o.directions, "--directions")?;
                let dict = load_dictionary(path)?;
                g = g.with_directions(dict.atoms().rows().into_iter().map(|r| r.to_owned()).collect());
            }
            g.fit(&recon(&reference)?)?;
            g
        }
    };
    // Concept filtering encodes the raw data itself.
    let after = if method == GapMethodKind::BimodalFilter { transform.apply(&data)? } else { transform.apply(&before)? };
    let gap = gap_report(&before, &after, &GapConfig { seed: o.seed, ..GapConfig::default() })?;
    save_dataset(&after, out.join("transformed.emb"))?;
    write_json(&out.join("config.json"), &o)?;
    write_json(&out.join("gap_report.json"), &json!({ "config": o, "method": method, "gap": gap }))?;
    let mut csv = String::from("stage,role,bin_left,count\n");
    for (stage, ds) in [("before", &before), ("after", &after)] {
        let (dq, dr) = ood_distances(ds.domain_b(), ds.domain_a(), OOD_K)?;
        let hi = dq.iter().chain(&dr).cloned().fold(0.0, f64::max);
        for (role, v) in [("query", &dq), ("reference", &dr)] {
            let (edges, counts) = histogram(v, 0.0, hi, o.bins.max(1));
            for (e, c) in edges.iter().zip(counts) {
                csv.push_str(&format!("{stage},{role},{e:.6},{c}\n"));
            }
        }
    }
    std::fs::write(out.join("ood_hist.csv"), csv)?;
    println!("DiM {:.4} -> {:.4}, recall@1 {:.4} -> {:.4}", gap.before.dim, gap.after.dim, gap.before.recall_at_1, gap.after.recall_at_1);
    Ok(())
}

fn cmd_arith(cli: &Cli, o: ArithOptions) -> CmdResult {
    let src = load_data(&o.src, "--src")?;
    let delta = load_data(&o.delta, "--delta")?;
    let targets = load_data(&o.targets, "--targets")?;
    let model = load_sae(&o.model)?;
    let mask_data = match &o.mask_data {
        Some(_) => load_data(&o.mask_data, "--mask-data")?,
        None => targets.clone(),
    };
    let out = out_dir(cli)?;
    let (ms, _) = infer_structure(&mask_data, &model, o.tau)?;
    let mask: BinaryMask = ms.delta.clone();
    let queries = build_queries(src.domain_a(), delta.domain_b(), &model, &mask)?;
    let target_rows = targets.domain_a();
    let reference: Array2<f64> = model.reconstruct(target_rows);
    let rows = arithmetic_report(&queries, target_rows, reference.view(), o.k)?;
    let mut csv = String::from("variant,recall,ood_score\n");
    for r in &rows {
        csv.push_str(&format!("{},{:.6},{:.6}\n", r.variant.name(), r.recall, r.ood_score));
    }
    std::fs::write(out.join("arith.csv"), csv)?;
    let mut hist = String::from("variant,bin_left,count\n");
    let refn = crate::linalg::normalize_rows_lenient(reference.view());
    for q in &queries {
        if !matches!(q.variant, QueryVariant::Classic | QueryVariant::SaeRestricted) {
            continue;
        }
        let qn = crate::linalg::normalize_rows_lenient(q.q.view());
        let (dq, _) = ood_distances(qn.view(), refn.view(), o.k)?;
        let hi = dq.iter().cloned().fold(0.0, f64::max);
        let (edges, counts) = histogram(&dq, 0.0, hi, o.bins.max(1));
        for (e, c) in edges.iter().zip(counts) {
            hist.push_str(&format!("{},{e:.6},{c}\n", q.variant.name()));
        }
    }
    std::fs::write(out.join("ood_hist.csv"), hist)?;
    write_json(&out.join("config.json"), &o)?;
    write_json(&out.join("arith.json"), &json!({ "config": o, "bimodal_atoms": mask.count(), "rows": rows }))?;
    Ok(())
}

fn cmd_experiment(cli: &Cli, o: ExperimentConfig) -> CmdResult {
    let out = out_dir(cli)?;
    let report = run_experiment(&o)?;
    std::fs::write(out.join("experiment.csv"), report.to_csv())?;
    write_json(&out.join("config.json"), &o)?;
    write_json(&out.join("experiment.json"), &report)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn cmd_report(cli: &Cli, o: ReportOptions) -> CmdResult {
    let input = required(&o.input, "--input")?;
    let reports = report::collect_reports(input)?;
    let out = out_dir(cli)?;
    std::fs::write(out.join("table1.csv"), report::render_table(&reports))?;
    std::fs::write(out.join("summary.md"), report::render_summary(&reports))?;
    write_json(&out.join("config.json"), &o)?;
    Ok(())
}

