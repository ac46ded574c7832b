//! Command implementations binding the library into batch workflows.

use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context as _};

use chirpnet::config::PipelineConfig;
use chirpnet::eval::{
    self, evaluate, stratified_split, EvalInputs, SplitAssignment,
};
use chirpnet::head::{
    fit_class_gaussians, reject_decision, train_mlp, Decision, GaussianSet, MlpModel,
    REJECTED_LABEL,
};
use chirpnet::net::checkpoint::{load_network, save_network};
use chirpnet::net::{embeddings_matrix, Head, Network, NetworkConfig};
use chirpnet::store::{
    extract_features, parent_id, Dataset, FeatureStore, Manifest, Split,
};
use chirpnet::train;

/// Effective configuration for one invocation: file config (or defaults)
/// with command-line overrides applied.
pub struct Context {
    pub cfg: PipelineConfig,
    pub seed: u64,
}

impl Context {
    pub fn new(seed: u64, config: Option<&Path>, mel_only: bool) -> anyhow::Result<Self> {
        let mut cfg = match config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        cfg.metric_train.seed = seed;
        cfg.baseline_train.seed = seed;
        cfg.mlp.seed = seed;
        if mel_only {
            cfg.features.mel_only = true;
        }
        Ok(Self { cfg, seed })
    }

    fn network_config(&self, head: Head) -> NetworkConfig {
        let n = &self.cfg.network;
        NetworkConfig {
            input_shape: (self.cfg.features.mel_bands, self.cfg.features.frames, 3),
            conv_filters: n.conv_filters,
            mam_strand_filters: n.mam_strand_filters,
            mam_reduce_filters: n.mam_reduce_filters,
            dense_units: n.dense_units,
            dropout: n.dropout,
            weight_decay: self.cfg.metric_train.weight_decay,
            learning_rate: self.cfg.metric_train.learning_rate,
            head,
        }
    }
}

fn load_assignment(path: &Path) -> anyhow::Result<SplitAssignment> {
    SplitAssignment::load(path).with_context(|| format!("loading splits from {}", path.display()))
}

fn open_store(path: &Path) -> anyhow::Result<FeatureStore> {
    FeatureStore::open(path).with_context(|| format!("opening feature store {}", path.display()))
}

/// Select the examples of one split, matching segment ids through their
/// parent recording ids.
fn dataset_split(all: &Dataset, assignment: &SplitAssignment, split: Split) -> Dataset {
    Dataset {
        examples: all
            .examples
            .iter()
            .filter(|e| {
                assignment
                    .of(&e.example_id)
                    .or_else(|| assignment.of(parent_id(&e.example_id)))
                    == Some(split)
            })
            .cloned()
            .collect(),
    }
}

pub fn features_extract(
    ctx: &Context,
    manifest: &Path,
    store_dir: &Path,
    verify: bool,
) -> anyhow::Result<ExitCode> {
    let manifest = Manifest::load(manifest)?;
    let mut store = FeatureStore::open_or_create(store_dir)?;
    let n = extract_features(&manifest, &ctx.cfg.features, &mut store)?;
    eprintln!(
        "extracted {n} feature examples from {} recordings into {}",
        manifest.rows.len(),
        store_dir.display()
    );
    if verify {
        return features_verify(store_dir);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn features_verify(store_dir: &Path) -> anyhow::Result<ExitCode> {
    let store = open_store(store_dir)?;
    let report = store.verify();
    print!("{}", report.render());
    if report.ok() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

pub fn split(ctx: &Context, manifest: &Path, out: &Path) -> anyhow::Result<ExitCode> {
    let manifest = Manifest::load(manifest)?;
    let assignment = stratified_split(&manifest.id_label_pairs(), ctx.cfg.split_ratios, ctx.seed)?;
    assignment.save(out)?;
    eprintln!(
        "split {} examples: {} train / {} val / {} test -> {}",
        assignment.map.len(),
        assignment.count(Split::Train),
        assignment.count(Split::Val),
        assignment.count(Split::Test),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn train_metric(
    ctx: &Context,
    store_dir: &Path,
    splits: &Path,
    out: &Path,
    log_path: Option<&Path>,
    epochs: Option<usize>,
) -> anyhow::Result<ExitCode> {
    let store = open_store(store_dir)?;
    let assignment = load_assignment(splits)?;
    let all = store.load_dataset(None)?;
    let train_set = dataset_split(&all, &assignment, Split::Train);
    if train_set.is_empty() {
        bail!("no training examples selected by {}", splits.display());
    }
    let mut cfg = ctx.cfg.metric_train.clone();
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let mut net = Network::<f32>::build(ctx.network_config(Head::Metric), ctx.seed)?;
    eprintln!(
        "metric training: {} examples, {} classes, {} parameters",
        train_set.len(),
        train_set.classes().len(),
        net.param_count()
    );
    let diag = out.with_extension("diag.ckpt");
    let log = train::train_metric(&mut net, &train_set, &cfg, Some(&diag), |s| {
        eprintln!(
            "epoch {:4}: iters {:4} mined {:6} mean_loss {:10.4} alpha {:.2}",
            s.epoch, s.iterations, s.mined_total, s.mean_loss, s.alpha_end
        );
    })?;
    save_network(&net, out)?;
    if let Some(p) = log_path {
        log.save_records(p)?;
    }
    eprintln!(
        "trained {} epochs in {:.1}s; converged: {}; checkpoint -> {}",
        cfg.epochs,
        log.wall_seconds,
        log.converged_at
            .map(|e| format!("epoch {e}"))
            .unwrap_or_else(|| "no".into()),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn train_baseline(
    ctx: &Context,
    store_dir: &Path,
    splits: &Path,
    out: &Path,
    log_path: Option<&Path>,
    epochs: Option<usize>,
) -> anyhow::Result<ExitCode> {
    let store = open_store(store_dir)?;
    let assignment = load_assignment(splits)?;
    let all = store.load_dataset(None)?;
    let train_set = dataset_split(&all, &assignment, Split::Train);
    let val_set = dataset_split(&all, &assignment, Split::Val);
    if train_set.is_empty() || val_set.is_empty() {
        bail!("baseline training needs non-empty train and val splits");
    }
    let classes = train_set.classes();
    let mut cfg = ctx.cfg.baseline_train.clone();
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let mut net = Network::<f32>::build(
        ctx.network_config(Head::Softmax {
            classes: classes.len(),
        }),
        ctx.seed,
    )?;
    eprintln!(
        "baseline training: {} train / {} val, {} classes, {} parameters",
        train_set.len(),
        val_set.len(),
        classes.len(),
        net.param_count()
    );
    let log = train::train_baseline(&mut net, &train_set, &val_set, &cfg, |e| {
        eprintln!(
            "epoch {:4}: train_loss {:10.4} val_loss {:10.4}",
            e.epoch, e.train_loss, e.val_loss
        );
    })?;
    save_network(&net, out)?;
    if let Some(p) = log_path {
        log.save_records(p)?;
    }
    eprintln!(
        "kept epoch {} (min validation loss) in {:.1}s; checkpoint -> {}",
        log.selected_epoch,
        log.wall_seconds,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn embed_split_of(
    net: &Network<f32>,
    all: &Dataset,
    assignment: &SplitAssignment,
    split: Split,
) -> anyhow::Result<Vec<chirpnet::net::Embedding>> {
    let subset = dataset_split(all, assignment, split);
    if subset.is_empty() {
        bail!("no {} examples selected", split.as_str());
    }
    let refs: Vec<&chirpnet::dsp::MelExample> = subset.examples.iter().collect();
    Ok(net.embed_examples(&refs)?)
}

pub fn train_head(
    ctx: &Context,
    store_dir: &Path,
    splits: &Path,
    network: &Path,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let store = open_store(store_dir)?;
    let assignment = load_assignment(splits)?;
    let all = store.load_dataset(None)?;
    let net = load_network::<f32>(network)?;
    let embeddings = embed_split_of(&net, &all, &assignment, Split::Train)?;
    let mlp = train_mlp(&embeddings, &ctx.cfg.mlp)?;
    mlp.save(out)?;
    eprintln!(
        "trained MLP on {} embeddings over {} classes -> {}",
        embeddings.len(),
        mlp.classes().len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn openset_fit(
    _ctx: &Context,
    store_dir: &Path,
    splits: &Path,
    network: &Path,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let store = open_store(store_dir)?;
    let assignment = load_assignment(splits)?;
    let all = store.load_dataset(None)?;
    let net = load_network::<f32>(network)?;
    let train_emb = embed_split_of(&net, &all, &assignment, Split::Train)?;
    let val_emb = embed_split_of(&net, &all, &assignment, Split::Val)?;
    let set = fit_class_gaussians(&train_emb, &val_emb)?;
    set.save(out)?;
    eprintln!(
        "fitted {} class Gaussians -> {}",
        set.by_class.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_split(name: &str) -> anyhow::Result<Split> {
    Ok(Split::parse(name)?)
}

#[allow(clippy::too_many_arguments)]
pub fn classify(
    _ctx: &Context,
    store_dir: &Path,
    network: &Path,
    mlp_path: &Path,
    gaussians: Option<&Path>,
    reject: bool,
    splits: Option<&Path>,
    split: Option<&str>,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    if reject && gaussians.is_none() {
        bail!("--reject requires --gaussians");
    }
    let store = open_store(store_dir)?;
    let net = load_network::<f32>(network)?;
    let mlp = MlpModel::load(mlp_path)?;
    let gaussians = gaussians.map(GaussianSet::load).transpose()?;

    let all = store.load_dataset(None)?;
    let subset = match (splits, split) {
        (Some(sp), Some(name)) => dataset_split(&all, &load_assignment(sp)?, parse_split(name)?),
        (None, None) => all,
        _ => bail!("--splits and --split must be given together"),
    };
    if subset.is_empty() {
        bail!("no examples selected");
    }
    let refs: Vec<&chirpnet::dsp::MelExample> = subset.examples.iter().collect();
    let embeddings = net.embed_examples(&refs)?;
    let matrix = embeddings_matrix(&embeddings);
    let probs = mlp.probabilities(&matrix)?;

    let mut csv = String::from("example_id,label,probability\n");
    let mut rejected = 0usize;
    for (i, e) in embeddings.iter().enumerate() {
        let row = probs.row(i);
        let (argmax, p) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty probabilities");
        let predicted = &mlp.classes()[argmax];
        let label = if reject {
            let g = gaussians.as_ref().expect("checked above");
            match reject_decision(&e.values, predicted, g)? {
                Decision::Accept => predicted.clone(),
                Decision::Reject => {
                    rejected += 1;
                    REJECTED_LABEL.to_string()
                }
            }
        } else {
            predicted.clone()
        };
        csv.push_str(&format!("{},{label},{p}\n", e.example_id));
    }
    std::fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "classified {} examples ({rejected} rejected) -> {}",
        embeddings.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    ctx: &Context,
    store_dir: &Path,
    splits: &Path,
    network: &Path,
    mlp_path: &Path,
    gaussians: Option<&Path>,
    reject: bool,
    outlier_store: Option<&Path>,
    report_path: &Path,
    confusion: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    if (reject || outlier_store.is_some()) && gaussians.is_none() {
        bail!("--reject/--outlier-store require --gaussians");
    }
    let store = open_store(store_dir)?;
    let assignment = load_assignment(splits)?;
    let all = store.load_dataset(None)?;
    let net = load_network::<f32>(network)?;
    let mlp = MlpModel::load(mlp_path)?;
    let gaussian_set = gaussians.map(GaussianSet::load).transpose()?;
    let outliers = outlier_store
        .map(|p| -> anyhow::Result<Dataset> { Ok(open_store(p)?.load_dataset(None)?) })
        .transpose()?;

    let report = evaluate(EvalInputs {
        network: &net,
        mlp: &mlp,
        gaussians: if reject || outliers.is_some() {
            gaussian_set.as_ref()
        } else {
            None
        },
        dataset: &all,
        assignment: &assignment,
        outliers: outliers.as_ref(),
        config_echo: ctx.cfg.echo_json(),
    })?;
    report.save(report_path)?;
    if let Some(c) = confusion {
        report.write_confusion_csv(c)?;
    }
    print!("{}", report.render());
    Ok(ExitCode::SUCCESS)
}

pub fn embed(
    _ctx: &Context,
    store_dir: &Path,
    network: &Path,
    out: &Path,
    splits: Option<&Path>,
    split: Option<&str>,
) -> anyhow::Result<ExitCode> {
    let store = open_store(store_dir)?;
    let net = load_network::<f32>(network)?;
    let all = store.load_dataset(None)?;
    let subset = match (splits, split) {
        (Some(sp), Some(name)) => dataset_split(&all, &load_assignment(sp)?, parse_split(name)?),
        (None, None) => all,
        _ => bail!("--splits and --split must be given together"),
    };
    if subset.is_empty() {
        bail!("no examples selected");
    }
    let refs: Vec<&chirpnet::dsp::MelExample> = subset.examples.iter().collect();
    let embeddings = net.embed_examples(&refs)?;
    eval::export_embeddings(&embeddings, out)?;
    eprintln!("exported {} embeddings -> {}", embeddings.len(), out.display());
    Ok(ExitCode::SUCCESS)
}
