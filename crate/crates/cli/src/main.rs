//! `backflip` command-line driver.

mod montage;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::warn;
use serde::Serialize;

use backflip_core::augment::{
    backflip, erase_and_inpaint, global_augment, BackflipConfig, GlobalKind, GlobalTransform, LocalKind,
    TransformRule,
};
use backflip_core::imgcore::{encode_png, read_image, ImageBuffer};
use backflip_core::inpaint::{load_precomputed_background, InpaintKind, InpaintMethod};
use backflip_core::metrics::{evaluate, read_score_csv_file, MetricsError, DEFAULT_THRESHOLD};
use backflip_core::pipeline::{
    image_rng, preprocess_corpus, run_epoch, sweep, CorpusContext, PipelineError, RunConfig, SweepAxis,
    OVERRIDE_KEYS,
};
use backflip_core::segments::{import_masks_into, load_index, SegmentError, DEFAULT_N_RETAINED};
use backflip_core::toy::{generate_toy_corpus, ToyOptions};

#[derive(Parser)]
#[command(name = "backflip", version, about = "Local augmentation for artistic images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter per-image masks and write segment indexes.
    ImportMasks(ImportArgs),
    /// Build segment indexes for a corpus and check backgrounds.
    Preprocess(PreprocessArgs),
    /// Augment the training split for one epoch.
    Augment(AugmentArgs),
    /// Run one epoch per value of an ablation axis.
    Sweep(SweepArgs),
    /// Score predictions against ground truth.
    Metrics(MetricsArgs),
    /// Write comparison montages for one image.
    Inspect(InspectArgs),
    /// Generate a synthetic corpus with masks and backgrounds.
    ToyCorpus(ToyArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set k_segments=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (default: logical processors).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ImportArgs {
    /// Directory of `<id>.<ext>` images.
    #[arg(long)]
    images: PathBuf,
    /// Directory holding `<id>/<id>.seg<k>.png` masks.
    #[arg(long)]
    masks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Segments to retain per image.
    #[arg(long, default_value_t = DEFAULT_N_RETAINED)]
    n: usize,
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Report path (default: `preprocess.report.json` beside the config).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    epoch: u64,
    /// Overrides the policy seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Report path (default: `<out>.report.json`).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// inpaint_method, local_transform or k_segments.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated values (default: the full axis).
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    #[arg(long, default_value_t = 0)]
    epoch: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Report path (default: `<out>.sweep.json`).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// CSV with columns id,y_true,y_pred.
    #[arg(long)]
    pred: PathBuf,
    /// Score range as MIN,MAX; scores are mapped onto [0, 1].
    #[arg(long, default_value = "0,1", value_parser = parse_scale)]
    scale: (f64, f64),
    /// Positive-class threshold on normalized scores.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    image: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    epoch: u64,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 96)]
    min_side: u32,
    #[arg(long, default_value_t = 160)]
    max_side: u32,
}

fn parse_scale(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((a, b))
}

/// Failure classes, mapped onto exit codes 1 and 2.
enum Failure {
    Data(anyhow::Error),
    Usage(anyhow::Error),
}

type CmdResult = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Config { .. }
        | PipelineError::UnknownOverride(_)
        | PipelineError::InvalidOverride { .. }
        | PipelineError::InvalidPolicy(_)
        | PipelineError::InvalidAxisValue { .. }
        | PipelineError::Manifest { .. }
        | PipelineError::DuplicateId(_)
        | PipelineError::Io { .. } => usage(e),
        _ => data(e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ImportMasks(a) => cmd_import_masks(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::ToyCorpus(a) => cmd_toy_corpus(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_context(args: &ConfigArgs, seed: Option<u64>) -> Result<CorpusContext, Failure> {
    let mut cfg = RunConfig::load(&args.config).map_err(pipeline_failure)?;
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            usage(anyhow!(
                "override {kv:?} is not KEY=VALUE (keys: {})",
                OVERRIDE_KEYS.join(", ")
            ))
        })?;
        cfg.apply_override(k.trim(), v).map_err(pipeline_failure)?;
    }
    if let Some(w) = args.workers {
        cfg.workers = Some(w);
    }
    if let Some(s) = seed {
        cfg.policy.seed = s;
    }
    cfg.policy.validate().map_err(pipeline_failure)?;
    CorpusContext::from_config(&cfg).map_err(pipeline_failure)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(data)?;
    bytes.push(b'\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(usage)?;
    }
    std::fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(usage)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Serialize)]
struct ImportRow {
    image_id: String,
    retained: usize,
    skipped_masks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn cmd_import_masks(a: ImportArgs) -> CmdResult {
    for (flag, dir) in [("--images", &a.images), ("--masks", &a.masks)] {
        if !dir.is_dir() {
            return Err(usage(anyhow!("{flag} {} is not a directory", dir.display())));
        }
    }
    if a.n == 0 {
        return Err(usage(anyhow!("--n must be at least 1")));
    }
    let mut images: Vec<(String, PathBuf)> = std::fs::read_dir(&a.images)
        .with_context(|| format!("reading {}", a.images.display()))
        .map_err(usage)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
        .collect();
    images.sort();

    let mut rows = Vec::new();
    for (id, path) in &images {
        let result = image::image_dimensions(path)
            .map_err(anyhow::Error::from)
            .and_then(|dims| Ok(import_masks_into(&a.masks.join(id), &a.out.join(id), dims, id, a.n)?));
        rows.push(match result {
            Ok(index) => ImportRow {
                image_id: id.clone(),
                retained: index.len(),
                skipped_masks: index.skipped_masks,
                error: None,
            },
            Err(e) => ImportRow {
                image_id: id.clone(),
                retained: 0,
                skipped_masks: 0,
                error: Some(format!("{e:#}")),
            },
        });
    }

    println!("{:<24} {:>8} {:>8}", "image", "retained", "skipped");
    for r in &rows {
        match &r.error {
            None => println!("{:<24} {:>8} {:>8}", r.image_id, r.retained, r.skipped_masks),
            Some(e) => println!("{:<24} error: {e}", r.image_id),
        }
    }
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    let skipped: usize = rows.iter().map(|r| r.skipped_masks).sum();
    println!(
        "{} images, {} retained, {} skipped, {} failed",
        rows.len(),
        rows.iter().map(|r| r.retained).sum::<usize>(),
        skipped,
        failed
    );
    write_json(&a.out.join("import.report.json"), &rows)?;
    if failed > 0 || skipped > 0 {
        return Err(data(anyhow!(
            "{failed} images failed, {skipped} mask files unreadable, empty or mis-sized"
        )));
    }
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> CmdResult {
    let ctx = load_context(&a.config, None)?;
    let report = preprocess_corpus(&ctx).map_err(pipeline_failure)?;
    let path = a.report.unwrap_or_else(|| {
        a.config
            .config
            .parent()
            .unwrap_or(Path::new("."))
            .join("preprocess.report.json")
    });
    write_json(&path, &report)?;
    println!(
        "{} images: {} segments retained, {} masks skipped, {} cached, {} without segments, {} incomplete ({:.0} ms)",
        report.images,
        report.total_retained,
        report.total_skipped_masks,
        report.cached,
        report.no_segments,
        report.incomplete,
        report.wall_time_ms
    );
    for e in report.entries.iter().filter(|e| e.error.is_some()) {
        println!("  {}: {:?}: {}", e.image_id, e.status, e.error.as_deref().unwrap_or(""));
    }
    if report.incomplete > 0 {
        return Err(data(anyhow!("{} images incomplete; see {}", report.incomplete, path.display())));
    }
    Ok(())
}

fn cmd_augment(a: AugmentArgs) -> CmdResult {
    let ctx = load_context(&a.config, a.seed)?;
    let report = run_epoch(&ctx, a.epoch, &a.out).map_err(pipeline_failure)?;
    let path = a.report.unwrap_or_else(|| sibling(&a.out, ".report.json"));
    write_json(&path, &report)?;
    println!(
        "epoch {}: {} augmented, {} passed through, {} failed, {} region violations ({:.0} ms)",
        report.epoch,
        report.augmented,
        report.passthrough,
        report.failures,
        report.region_violations(),
        report.wall_time_ms
    );
    for r in report.per_image.iter().filter(|r| r.error.is_some()) {
        println!("  {}: {}", r.image_id, r.error.as_deref().unwrap_or(""));
    }
    if report.failures > 0 {
        return Err(data(anyhow!("{} images failed; see {}", report.failures, path.display())));
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> CmdResult {
    let ctx = load_context(&a.config, a.seed)?;
    let values = if a.values.is_empty() {
        a.axis.default_values(&ctx.policy)
    } else {
        a.values.clone()
    };
    let (report, _) = sweep(&ctx, a.axis, &values, a.epoch, &a.out).map_err(pipeline_failure)?;
    let path = a.report.unwrap_or_else(|| sibling(&a.out, ".sweep.json"));
    write_json(&path, &report)?;
    println!("{:<16} {:>9} {:>8} {:>10} {:>14}", a.axis.name(), "augmented", "failures", "violations", "changed");
    for r in &report.rows {
        let changed = r
            .mean_changed_fraction
            .map_or_else(|| "-".to_string(), |f| format!("{f:.5}"));
        println!(
            "{:<16} {:>9} {:>8} {:>10} {:>14}",
            r.value, r.augmented, r.failures, r.region_violations, changed
        );
    }
    if let Some(m) = report.monotone_in_k {
        println!("non-decreasing in k: {m}");
    }
    if !report.invariants_ok {
        return Err(data(anyhow!("sweep had failures or region violations; see {}", path.display())));
    }
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> CmdResult {
    let classify = |e: MetricsError| match e {
        MetricsError::ZeroVariance(_) | MetricsError::TooShort(_) | MetricsError::OutOfScale { .. } => data(e),
        _ => usage(e),
    };
    let table = read_score_csv_file(&a.pred, a.scale).map_err(classify)?;
    let report = evaluate(&table, a.threshold).map_err(classify)?;
    println!("{}", serde_json::to_string(&report).map_err(data)?);
    Ok(())
}

/// Panel labels, written beside each montage.
type Legend = BTreeMap<String, Vec<String>>;

fn cmd_inspect(a: InspectArgs) -> CmdResult {
    let ctx = load_context(&a.config, None)?;
    let entry = ctx
        .manifest
        .get(&a.image)
        .ok_or_else(|| usage(anyhow!("image {:?} is not in the corpus", a.image)))?
        .clone();
    let id = entry.image_id.as_str();
    let image = read_image(&ctx.manifest.image_path(&entry)).map_err(usage)?;
    let index = match load_index(&ctx.mask_dir(id), id) {
        Ok(i) => i,
        Err(SegmentError::Io { .. }) => {
            return Err(usage(anyhow!("{id} is not preprocessed; run `backflip preprocess` first")))
        }
        Err(e) => return Err(data(e)),
    };
    let background = load_precomputed_background(id, &ctx.cache_dir, image.dims()).ok();
    let policy = &ctx.policy;
    let rng = || image_rng(policy.seed, id, a.epoch);
    let mut legend = Legend::new();
    let mut montages: Vec<(&str, Vec<ImageBuffer>)> = Vec::new();

    // masks
    let mut panels = vec![image.clone()];
    let mut labels = vec!["original".to_string()];
    for s in &index.segments {
        panels.push(montage::mask_panel(&s.mask).map_err(data)?);
        labels.push(s.id().to_string());
    }
    legend.insert("segments".into(), labels);
    montages.push(("segments", panels));

    // global vs local
    let mut panels = vec![image.clone()];
    let mut labels = vec!["original".to_string()];
    for kind in [GlobalKind::Hflip, GlobalKind::Rotate, GlobalKind::RandomResizedCrop] {
        let t = GlobalTransform {
            kind,
            settings: policy.global,
        };
        panels.push(global_augment(&image, &t, &mut rng()).map_err(data)?.image);
        labels.push(format!("global {}", kind.name()));
    }
    let cfg = BackflipConfig {
        k: policy.k_segments.min(index.len()),
        ..policy.backflip_config()
    };
    panels.push(backflip(&image, &index, &cfg, background.as_ref(), &mut rng()).map_err(data)?.image);
    labels.push("local backflip".into());
    legend.insert("global_vs_local".into(), labels);
    montages.push(("global_vs_local", panels));

    // inpainting methods, same segments throughout
    let k = policy.k_segments.min(index.len());
    let mut panels = vec![image.clone()];
    let mut labels = vec!["original".to_string()];
    for kind in [
        InpaintKind::Mean,
        InpaintKind::Median,
        InpaintKind::Telea,
        InpaintKind::Ns,
        InpaintKind::ExternalPrecomputed,
    ] {
        let method = InpaintMethod {
            kind,
            ..policy.inpaint.clone()
        };
        let panel = if kind == InpaintKind::ExternalPrecomputed && background.is_none() {
            warn!("{id}: no precomputed background; external panel left blank");
            ImageBuffer::filled(image.width(), image.height(), [128, 128, 128]).map_err(data)?
        } else {
            erase_and_inpaint(&image, &index, k, &method, background.as_ref(), &mut rng())
                .map_err(data)?
                .image
        };
        panels.push(panel);
        labels.push(kind.name().to_string());
    }
    legend.insert("inpainting_methods".into(), labels);
    montages.push(("inpainting_methods", panels));

    // transform types, each always applied
    let mut panels = vec![image.clone()];
    let mut labels = vec!["original".to_string()];
    for kind in LocalKind::ALL {
        let cfg = BackflipConfig {
            k,
            inpaint: policy.inpaint.clone(),
            transforms: vec![TransformRule::new(kind, 1.0)],
        };
        panels.push(backflip(&image, &index, &cfg, background.as_ref(), &mut rng()).map_err(data)?.image);
        labels.push(kind.name().to_string());
    }
    legend.insert("transform_types".into(), labels);
    montages.push(("transform_types", panels));

    // segment counts
    let mut panels = vec![image.clone()];
    let mut labels = vec!["original".to_string()];
    for k in 1..=index.len().min(5) {
        let cfg = BackflipConfig {
            k,
            ..policy.backflip_config()
        };
        panels.push(backflip(&image, &index, &cfg, background.as_ref(), &mut rng()).map_err(data)?.image);
        labels.push(format!("k={k}"));
    }
    legend.insert("segment_counts".into(), labels);
    montages.push(("segment_counts", panels));

    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .map_err(usage)?;
    for (name, panels) in &montages {
        let m = montage::hstack(panels).map_err(data)?;
        let path = a.out.join(format!("{id}.{name}.png"));
        std::fs::write(&path, encode_png(&m).map_err(data)?)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(usage)?;
        println!("{}", path.display());
    }
    write_json(&a.out.join(format!("{id}.legend.json")), &legend)
}

fn cmd_toy_corpus(a: ToyArgs) -> CmdResult {
    if a.min_side == 0 || a.min_side > a.max_side {
        return Err(usage(anyhow!("need 0 < --min-side <= --max-side")));
    }
    let opts = ToyOptions {
        n_images: a.n,
        seed: a.seed,
        min_side: a.min_side,
        max_side: a.max_side,
        ..ToyOptions::default()
    };
    let corpus = generate_toy_corpus(&a.out, &opts).map_err(usage)?;
    println!("{}", serde_json::to_string_pretty(&corpus).map_err(data)?);
    Ok(())
}
