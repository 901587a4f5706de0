use std::path::{Path, PathBuf};

use absgen::corrupt::{ssim_default, Corruption, SSIM_WINDOW};
use absgen::data::{pgm, sample_pairs, EpisodeSpec, LabeledDataset, Manifest, Split};
use absgen::metrics::{self, evaluate_oneshot, evaluate_pairs, EvalReport, LabelOracle, PairEvalConfig};
use absgen::nn::{Architecture, ModelKind, Network, PairScorer, Params};
use absgen::optim::{self, TrainConfig};
use absgen::rng::Rng;
use absgen::theory::{hyperplane_transfer_unchecked, ConditionReport, TransferConfig};
use serde::Serialize;

use crate::config::{ArchitectureKind, Config};
use crate::error::CliError;
use crate::output::{append_csv, ensure_dir, write_atomic, write_json};

pub const PARAMS_FILE: &str = "params.absg";
pub const LOSS_FILE: &str = "loss.csv";
pub const RESULTS_FILE: &str = "results.csv";

/// Resolved inputs shared by every command.
pub struct Context {
    pub config: Config,
    pub out_dir: PathBuf,
}

impl Context {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn fingerprint(&self) -> Result<String, CliError> {
        Ok(metrics::fingerprint(&self.config)?)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn load_split(cfg: &Config, split: Split) -> Result<LabeledDataset, CliError> {
    let ds_cfg = cfg.dataset()?;
    let manifest = Manifest::load(&ds_cfg.manifest)?;
    let target = ds_cfg.image_size.map(|[h, w]| (h, w));
    let ds = manifest.load_split(split, target)?;
    let keep = match split {
        Split::Train => ds_cfg.classes.as_ref(),
        Split::Probe => ds_cfg.probe_classes.as_ref().or(ds_cfg.classes.as_ref()),
    };
    let field = match split {
        Split::Probe if ds_cfg.probe_classes.is_some() => "dataset.probe_classes",
        _ => "dataset.classes",
    };
    match keep {
        Some(names) => ds.filter_classes(names).map_err(|e| CliError::Config {
            field: field.to_string(),
            message: e.to_string(),
        }),
        None => Ok(ds),
    }
}

fn sample_shape(ds: &LabeledDataset) -> Result<Vec<usize>, CliError> {
    ds.sample_shape()
        .map(<[usize]>::to_vec)
        .ok_or_else(|| absgen::Error::Contract("dataset split is empty".into()).into())
}

fn build_network(cfg: &Config, shape: &[usize], seed: u64) -> Result<Network, CliError> {
    let m = &cfg.model;
    let len = shape.iter().product();
    let image = || match *shape {
        [c, h, w] => Ok((c, (h, w))),
        _ => Err(CliError::Config {
            field: "model.kind".into(),
            message: format!("cnn models need [C, H, W] samples, dataset has {shape:?}"),
        }),
    };
    let net = match (m.kind, m.architecture) {
        (ModelKind::Mlp, ArchitectureKind::Pair) => Network::pair_mlp(len, m.output, seed)?,
        (ModelKind::Mlp, ArchitectureKind::Siamese) => Network::siamese_mlp(len, m.margin, seed)?,
        (ModelKind::Cnn, ArchitectureKind::Pair) => {
            let (c, hw) = image()?;
            Network::pair_cnn(c, hw, seed)?
        }
        (ModelKind::Cnn, ArchitectureKind::Siamese) => {
            let (c, hw) = image()?;
            Network::siamese_cnn(c, hw, m.margin, seed)?
        }
    };
    Ok(net)
}

fn load_network(cfg: &Config, shape: &[usize], path: &Path) -> Result<Network, CliError> {
    let template = build_network(cfg, shape, 0)?;
    let params = Params::load(path)?;
    params
        .check_against(&template.spec)
        .map_err(|e| CliError::Mismatch(format!("{}: {e}", path.display())))?;
    let arch: Architecture = template.architecture;
    Ok(Network::new(arch, template.spec, params)?)
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub experiment: String,
    pub fingerprint: String,
    pub param_count: usize,
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

pub fn train(ctx: &Context) -> Result<(TrainSummary, Vec<PathBuf>), CliError> {
    let cfg = &ctx.config;
    let data = load_split(cfg, Split::Train)?;
    let mut net = build_network(cfg, &sample_shape(&data)?, ctx.seed())?;
    let t = &cfg.train;
    let sampler = |n: usize, rng: &mut Rng| sample_pairs(&data, n, &t.pairs, rng);
    let train_cfg = TrainConfig {
        epochs: t.epochs,
        pairs_per_epoch: t.pairs_per_epoch,
        batch_size: t.batch_size,
        optimizer: t.optimizer,
        loss: t.loss,
        seed: ctx.seed(),
    };
    let trace = optim::train(&mut net, &sampler, &train_cfg)?;

    ensure_dir(&ctx.out_dir)?;
    let params_path = ctx.out(PARAMS_FILE);
    let loss_path = ctx.out(LOSS_FILE);
    let config_path = ctx.out("config.json");
    write_atomic(&params_path, &net.params.to_bytes())?;
    write_atomic(&loss_path, trace.to_csv().as_bytes())?;
    write_json(&config_path, cfg)?;
    let summary = TrainSummary {
        experiment: cfg.experiment.clone(),
        fingerprint: ctx.fingerprint()?,
        param_count: net.params.param_count(),
        epochs: trace.len(),
        final_loss: trace.epoch_losses.last().copied(),
    };
    Ok((summary, vec![params_path, loss_path, config_path]))
}

fn scorer(ctx: &Context, probe: &LabeledDataset, params: Option<&Path>, oracle: bool) -> Result<Box<dyn PairScorer>, CliError> {
    if oracle {
        return Ok(Box::new(LabelOracle::default()));
    }
    let default = ctx.out(PARAMS_FILE);
    let path = params.unwrap_or(&default);
    Ok(Box::new(load_network(&ctx.config, &sample_shape(probe)?, path)?))
}

#[derive(Debug, Serialize)]
pub struct ReportSet {
    pub experiment: String,
    pub fingerprint: String,
    pub threshold: Option<f64>,
    pub reports: Vec<EvalReport>,
}

pub fn eval(
    ctx: &Context,
    params: Option<&Path>,
    corruptions: &[Corruption],
    oracle: bool,
) -> Result<(ReportSet, Vec<PathBuf>), CliError> {
    let cfg = &ctx.config;
    let probe = load_split(cfg, Split::Probe)?;
    let scorer = scorer(ctx, &probe, params, oracle)?;
    let threshold = cfg.eval.threshold.unwrap_or_else(|| scorer.threshold());
    let eval_cfg = PairEvalConfig {
        n_pairs: cfg.eval.n_pairs,
        runs: cfg.eval.runs,
        pairs: cfg.eval.pairs,
    };
    let fingerprint = ctx.fingerprint()?;
    let mut reports = Vec::with_capacity(2 * corruptions.len());
    for c in corruptions {
        let result = evaluate_pairs(scorer.as_ref(), &probe, c, &eval_cfg, threshold, ctx.seed())?;
        reports.push(result.auc.labeled(&cfg.experiment, &fingerprint));
        reports.push(result.f1.labeled(&cfg.experiment, &fingerprint));
    }
    let set = ReportSet {
        experiment: cfg.experiment.clone(),
        fingerprint,
        threshold: Some(threshold),
        reports,
    };
    let files = persist(ctx, "eval.json", &set)?;
    Ok((set, files))
}

fn persist(ctx: &Context, name: &str, set: &ReportSet) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(&ctx.out_dir)?;
    let json = ctx.out(name);
    let csv = ctx.out(RESULTS_FILE);
    write_json(&json, set)?;
    append_csv(&csv, &set.reports.iter().map(EvalReport::csv_row).collect::<Vec<_>>())?;
    Ok(vec![json, csv])
}

pub fn oneshot(
    ctx: &Context,
    params: Option<&Path>,
    n_way: usize,
    trials: usize,
    oracle: bool,
) -> Result<(ReportSet, Vec<PathBuf>), CliError> {
    let cfg = &ctx.config;
    let probe = load_split(cfg, Split::Probe)?;
    let spec = EpisodeSpec::new(n_way, cfg.oneshot.queries_per_class);
    let need = spec.k_shot + spec.queries_per_class;
    let available = probe.counts().iter().filter(|&&c| c >= need).count();
    if n_way > available {
        return Err(CliError::NWay { n_way, available });
    }
    let scorer = scorer(ctx, &probe, params, oracle)?;
    let fingerprint = ctx.fingerprint()?;
    let report = evaluate_oneshot(scorer.as_ref(), &probe, &spec, trials, ctx.seed())?.labeled(&cfg.experiment, &fingerprint);
    let set = ReportSet {
        experiment: cfg.experiment.clone(),
        fingerprint,
        threshold: None,
        reports: vec![report],
    };
    let files = persist(ctx, "oneshot.json", &set)?;
    Ok((set, files))
}

#[derive(Debug, Serialize)]
pub struct TheoryReport {
    pub def3_satisfied: bool,
    #[serde(rename = "acc_on_A")]
    pub acc_on_a: f64,
    #[serde(rename = "acc_on_B")]
    pub acc_on_b: f64,
    pub normal_angle_deg: f64,
    pub conditions: ConditionReport,
    pub seed: u64,
    pub fingerprint: String,
}

pub fn theory(ctx: &Context, transfer: &TransferConfig) -> Result<(TheoryReport, Vec<PathBuf>), CliError> {
    let r = hyperplane_transfer_unchecked(transfer, ctx.seed())?;
    let report = TheoryReport {
        def3_satisfied: r.conditions.satisfied,
        acc_on_a: r.acc_on_a,
        acc_on_b: r.acc_on_b,
        normal_angle_deg: r.normal_angle_deg,
        conditions: r.conditions,
        seed: ctx.seed(),
        fingerprint: ctx.fingerprint()?,
    };
    ensure_dir(&ctx.out_dir)?;
    let path = ctx.out("theory.json");
    write_json(&path, &report)?;
    Ok((report, vec![path]))
}

#[derive(Debug, Serialize)]
pub struct PreviewImage {
    pub index: usize,
    pub class: String,
    pub raw: PathBuf,
    pub corrupted: PathBuf,
    /// Absent when the image is smaller than the SSIM window.
    pub ssim: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Preview {
    pub corruption: String,
    pub mean_ssim: Option<f64>,
    pub images: Vec<PreviewImage>,
}

fn fits_window(img: &absgen::Tensor) -> bool {
    let shape = img.shape();
    shape.len() >= 2 && shape[shape.len() - 2..].iter().all(|&d| d >= SSIM_WINDOW)
}

pub fn corrupt_preview(
    ctx: &Context,
    corruption: &Corruption,
    split: Split,
    count: usize,
) -> Result<(Preview, Vec<PathBuf>), CliError> {
    let data = load_split(&ctx.config, split)?;
    let n = count.min(data.len());
    if n == 0 {
        return Err(absgen::Error::Contract("nothing to preview".into()).into());
    }
    let subset = LabeledDataset::new(
        data.samples()[..n].to_vec(),
        data.labels()[..n].to_vec(),
        data.class_names().to_vec(),
        split,
    )?;
    let corrupted = corruption.apply_dataset(&subset, ctx.seed(), 0)?;
    let dir = ctx.out("preview");
    ensure_dir(&dir)?;
    let slug = corruption.to_string().replace([':', '.'], "-");
    let mut images = Vec::with_capacity(n);
    let mut files = Vec::with_capacity(2 * n + 1);
    for i in 0..n {
        let raw = dir.join(format!("{i:03}-raw.pgm"));
        let out = dir.join(format!("{i:03}-{slug}.pgm"));
        write_atomic(&raw, &pgm::encode_pgm(subset.sample(i))?)?;
        write_atomic(&out, &pgm::encode_pgm(corrupted.sample(i))?)?;
        images.push(PreviewImage {
            index: i,
            class: subset.class_names()[subset.labels()[i]].clone(),
            ssim: fits_window(subset.sample(i))
                .then(|| ssim_default(subset.sample(i), corrupted.sample(i)))
                .transpose()?,
            raw: raw.clone(),
            corrupted: out.clone(),
        });
        files.extend([raw, out]);
    }
    let ssims: Option<Vec<f64>> = images.iter().map(|p| p.ssim).collect();
    let preview = Preview {
        corruption: corruption.to_string(),
        mean_ssim: ssims.map(|v| v.iter().sum::<f64>() / n as f64),
        images,
    };
    let json = dir.join("preview.json");
    write_json(&json, &preview)?;
    files.push(json);
    Ok((preview, files))
}

#[derive(Debug, Serialize)]
pub struct SplitSummary {
    pub samples: usize,
    pub classes: usize,
    pub sample_shape: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct ManifestSummary {
    pub name: String,
    pub verified: Vec<String>,
    pub unverified: Vec<String>,
    pub train: SplitSummary,
    pub probe: SplitSummary,
}

/// Checks paths and digests, then parses both splits.
pub fn validate_manifest(path: &Path) -> Result<ManifestSummary, CliError> {
    let manifest = Manifest::load(path)?;
    let check = manifest.check()?;
    let summarize = |split| -> Result<SplitSummary, CliError> {
        let ds = manifest.load_split(split, None)?;
        Ok(SplitSummary {
            samples: ds.len(),
            classes: ds.n_classes(),
            sample_shape: ds.sample_shape().map(<[usize]>::to_vec).unwrap_or_default(),
        })
    };
    Ok(ManifestSummary {
        name: manifest.name.clone(),
        verified: check.verified,
        unverified: check.unverified,
        train: summarize(Split::Train)?,
        probe: summarize(Split::Probe)?,
    })
}
