use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use segfuse_core::coco::{
    load_dataset, load_results, results_to_string, write_dataset, write_results,
};
use segfuse_core::confusion::{
    build_confusion, guided_pairs, ConfusionConfig, ConfusionMatrix, GuidedPairs,
};
use segfuse_core::fusion::{
    filter_controller, fuse, fuse_trace_verify, FusionTrace, VerificationReport,
};
use segfuse_core::mixup::{
    augment_dataset, AugmentConfig, DirectorySource, ManifestEntry, OutputDataset, SampleOutcome,
};
use segfuse_core::synth::{gen_dataset, perturb_predictions, NoiseProfile, SynthConfig};
use segfuse_core::{evaluate, ApReport, EvalConfig, IouMode, SCHEMA_VERSION};
use serde::Serialize;
use serde_json::Value;

use crate::args::{
    AugmentArgs, Cli, Command, ConfusionArgs, EvalArgs, FuseArgs, PairsArgs, SynthArgs,
};
use crate::Failure;

/// Samples rendered per parallel batch while augmenting.
const AUGMENT_BATCH: usize = 64;

pub fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Eval(a) => eval(a),
        Command::Fuse(a) => fuse_cmd(a),
        Command::Confusion(a) => confusion(a),
        Command::Pairs(a) => pairs(a),
        Command::Augment(a) => augment(a, cli.seed),
        Command::Synth(a) => synth(a, cli.seed),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => {
            fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    schema_version: u32,
    mode: IouMode,
    images: usize,
    detections: usize,
    #[serde(flatten)]
    report: &'a ApReport,
}

fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let dataset = load_dataset(&a.gt)?;
    let dets = load_results(&a.dets, &dataset)?;
    let report = evaluate(
        &dataset.gt_by_image(),
        &dets,
        &EvalConfig::with_mode(a.mode),
    )?;
    let out = EvalOutput {
        schema_version: SCHEMA_VERSION,
        mode: a.mode,
        images: dataset.images.len(),
        detections: dets.values().map(Vec::len).sum(),
        report: &report,
    };
    write_json(&out, a.out.as_deref())?;
    Ok(())
}

#[derive(Serialize)]
struct TraceOutput<'a> {
    schema_version: u32,
    tau: f64,
    class_agnostic: bool,
    models: &'a [PathBuf],
    #[serde(flatten)]
    trace: &'a FusionTrace,
    #[serde(skip_serializing_if = "Option::is_none")]
    verification: Option<VerificationReport>,
}

fn fuse_cmd(a: &FuseArgs) -> Result<(), Failure> {
    if a.models.is_empty() {
        return Err(usage("fuse needs at least one --models file"));
    }
    if !(0.0..=1.0).contains(&a.tau) {
        return Err(usage(format!("--tau must be in [0, 1], got {}", a.tau)));
    }
    let config = EvalConfig {
        class_aware: !a.class_agnostic,
        ..EvalConfig::with_mode(IouMode::Box)
    };
    let dataset = load_dataset(&a.gt)?;
    let controller = load_results(&a.controller, &dataset)?;
    let pseudo = filter_controller(&controller, a.tau);
    let models = a
        .models
        .iter()
        .map(|p| load_results(p, &dataset))
        .collect::<segfuse_core::Result<Vec<_>>>()?;

    let (fused, trace) = fuse(&models, &pseudo, &config)?;
    log::info!(
        "fused {} images from {} models with {} AP evaluations",
        trace.image_ids.len(),
        models.len(),
        trace.ap_evaluations
    );
    let verification = a
        .verify
        .then(|| fuse_trace_verify(&models, &pseudo, &trace, &config));
    if let Some(v) = &verification {
        if !v.is_clean() {
            log::error!("trace verification found {} violations", v.violations.len());
        }
    }

    match &a.out {
        Some(path) => write_results(&fused, path)?,
        None => println!("{}", results_to_string(&fused)),
    }
    if let Some(path) = &a.trace_out {
        let out = TraceOutput {
            schema_version: SCHEMA_VERSION,
            tau: a.tau,
            class_agnostic: a.class_agnostic,
            models: &a.models,
            trace: &trace,
            verification,
        };
        write_json(&out, Some(path))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ConfusionOutput<'a> {
    schema_version: u32,
    alpha: f64,
    beta: f64,
    mode: IouMode,
    #[serde(flatten)]
    confusion: &'a ConfusionMatrix,
    /// Pairs at `beta`, for convenience; `segfuse pairs` recomputes them.
    pairs: Vec<(u64, u64)>,
}

fn confusion(a: &ConfusionArgs) -> Result<(), Failure> {
    let config = ConfusionConfig {
        alpha: a.alpha,
        beta: a.beta,
        matching_mode: a.mode,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let dataset = load_dataset(&a.gt)?;
    let dets = load_results(&a.dets, &dataset)?;
    let c = build_confusion(&dataset, &dets, &config)?;
    let out = ConfusionOutput {
        schema_version: SCHEMA_VERSION,
        alpha: a.alpha,
        beta: a.beta,
        mode: a.mode,
        pairs: guided_pairs(&c, a.beta).pairs.into_iter().collect(),
        confusion: &c,
    };
    write_json(&out, a.out.as_deref())?;
    Ok(())
}

fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Serialize)]
struct PairsOutput {
    schema_version: u32,
    beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    pairs: Vec<(u64, u64)>,
}

fn pairs(a: &PairsArgs) -> Result<(), Failure> {
    if !(0.0..1.0).contains(&a.beta) {
        return Err(usage(format!("--beta must be in [0, 1), got {}", a.beta)));
    }
    let value = read_json(&a.confusion)?;
    let alpha = value.get("alpha").and_then(Value::as_f64);
    let c: ConfusionMatrix = serde_json::from_value(value)
        .with_context(|| format!("{} is not a confusion matrix", a.confusion.display()))?;
    let out = PairsOutput {
        schema_version: SCHEMA_VERSION,
        beta: a.beta,
        alpha,
        pairs: guided_pairs(&c, a.beta).pairs.into_iter().collect(),
    };
    write_json(&out, a.out.as_deref())?;
    Ok(())
}

#[derive(Serialize, Default)]
struct Counts {
    original: usize,
    augmented: usize,
    error: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    config: &'a AugmentConfig,
    counts: Counts,
    samples: Vec<ManifestEntry>,
}

fn augment(a: &AugmentArgs, seed: u64) -> Result<(), Failure> {
    let config = AugmentConfig {
        gamma: a.gamma,
        resize_range: [a.resize_range[0], a.resize_range[1]],
        bernoulli_p: a.bernoulli_p,
        min_visible_fraction: a.min_visible,
        seed,
        ..AugmentConfig::default()
    };
    let config = if a.no_photometric {
        config.without_photometrics()
    } else {
        config
    };
    config.validate().map_err(|e| usage(e.to_string()))?;

    let dataset = load_dataset(&a.gt)?;
    let pairs_value = read_json(&a.pairs)?;
    let pairs: GuidedPairs = serde_json::from_value(pairs_value)
        .with_context(|| format!("{} holds no category pairs", a.pairs.display()))?;
    let source = DirectorySource {
        root: a.images.clone(),
    };
    let image_dir = a.out_dir.join("images");
    fs::create_dir_all(&image_dir).with_context(|| format!("creating {}", image_dir.display()))?;

    let stream = augment_dataset(&dataset, &source, &pairs, &config)?;
    let mut output = OutputDataset::new(dataset.categories.clone());
    let mut counts = Counts::default();
    let mut entries = Vec::with_capacity(stream.len());
    let indices: Vec<usize> = (0..stream.len()).collect();
    for batch in indices.chunks(AUGMENT_BATCH) {
        let rendered: Vec<_> = batch
            .par_iter()
            .map(|&i| {
                let (entry, sample) = stream.sample(i);
                if let Some(s) = &sample {
                    let path = image_dir.join(s.output_file_name());
                    s.image
                        .save(&path)
                        .with_context(|| format!("writing {}", path.display()))?;
                }
                Ok((entry, sample))
            })
            .collect::<anyhow::Result<_>>()?;
        for (entry, sample) in rendered {
            match entry.outcome {
                SampleOutcome::Original => counts.original += 1,
                SampleOutcome::Augmented => counts.augmented += 1,
                SampleOutcome::Error => counts.error += 1,
            }
            if let Some(s) = &sample {
                output.push(s);
            }
            entries.push(entry);
        }
    }
    if counts.error > 0 {
        log::warn!("{} samples failed; see manifest.json", counts.error);
    }
    write_dataset(&output.finish(), a.out_dir.join("dataset.json"))?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        config: &config,
        counts,
        samples: entries,
    };
    write_json(&manifest, Some(&a.out_dir.join("manifest.json")))?;
    Ok(())
}

#[derive(Serialize)]
struct ProfileSummary {
    name: String,
    file: String,
    seed: u64,
    predictions: usize,
    profile: NoiseProfile,
}

#[derive(Serialize)]
struct SynthSummary<'a> {
    schema_version: u32,
    config: &'a SynthConfig,
    annotations: usize,
    profiles: Vec<ProfileSummary>,
}

fn resolve_profile(choice: &str, n_categories: usize) -> Result<(String, NoiseProfile), Failure> {
    if let Some(p) = NoiseProfile::builtin(choice, n_categories) {
        return Ok((choice.to_string(), p));
    }
    let path = Path::new(choice);
    if !path.exists() {
        return Err(usage(format!(
            "unknown profile '{choice}': not a preset and no such file"
        )));
    }
    let profile: NoiseProfile = serde_json::from_value(read_json(path)?)
        .with_context(|| format!("{choice} is not a noise profile"))?;
    let name = path
        .file_stem()
        .map_or("profile".into(), |s| s.to_string_lossy().into_owned());
    Ok((name, profile))
}

fn synth(a: &SynthArgs, seed: u64) -> Result<(), Failure> {
    let config = SynthConfig {
        seed,
        n_images: a.images,
        n_categories: a.categories,
        instances_per_image: (a.instances[0], a.instances[1]),
        ..SynthConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let mut profiles = Vec::new();
    for choice in &a.profiles {
        let (mut name, profile) = resolve_profile(choice, a.categories)?;
        profile
            .validate(a.categories)
            .map_err(|e| usage(format!("profile {choice}: {e}")))?;
        if profiles.iter().any(|(n, _)| *n == name) {
            name = format!("{name}_{}", profiles.len());
        }
        profiles.push((name, profile));
    }

    let (dataset, images) = gen_dataset(&config)?;
    let image_dir = a.out_dir.join("images");
    let pred_dir = a.out_dir.join("predictions");
    for dir in [&image_dir, &pred_dir] {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    dataset.images.par_iter().try_for_each(|rec| {
        let path = image_dir.join(&rec.file_name);
        images[&rec.id]
            .save(&path)
            .with_context(|| format!("writing {}", path.display()))
    })?;
    write_dataset(&dataset, a.out_dir.join("dataset.json"))?;

    let mut summaries = Vec::new();
    for (i, (name, profile)) in profiles.into_iter().enumerate() {
        let profile_seed = seed.wrapping_add(1 + i as u64);
        let preds = perturb_predictions(&dataset, &profile, profile_seed)?;
        let file = format!("{name}.json");
        write_results(&preds, pred_dir.join(&file))?;
        summaries.push(ProfileSummary {
            name,
            file: format!("predictions/{file}"),
            seed: profile_seed,
            predictions: preds.values().map(Vec::len).sum(),
            profile,
        });
    }
    let summary = SynthSummary {
        schema_version: SCHEMA_VERSION,
        config: &config,
        annotations: dataset.annotations.len(),
        profiles: summaries,
    };
    write_json(&summary, Some(&a.out_dir.join("summary.json")))?;
    Ok(())
}
