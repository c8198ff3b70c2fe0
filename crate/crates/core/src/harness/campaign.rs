//! Campaign orchestration: selects correctly classified test images, runs
//! every attack × epsilon × saliency method over them in a worker pool, and
//! funnels all rows through a single ordered writer for reproducible
//! artifacts.

use crate::attacks::{default_k, iterative_attack, AttackConfig, AttackKind};
use crate::dataset::Dataset;
use crate::engine::{argmax, load_model, save_model, train, Model};
use crate::error::NnError;
use crate::harness::config::{AttackChoice, DatasetKind, ExperimentSpec};
use crate::harness::csvutil::{fmt_float, write_csv};
use crate::harness::data::{data_root, load_cifar10, load_mnist, Splits};
use crate::harness::pgm::write_pgm;
use crate::harness::presets::{accuracy, build};
use crate::harness::synth::synth_splits;
use crate::interpret::{saliency, ReferencePoint, SaliencyMethod};
use crate::rng::chacha;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

type Result<T> = std::result::Result<T, NnError>;

/// The three saliency methods every campaign sweeps.
pub const METHODS: [SaliencyMethod; 3] = [
    SaliencyMethod::SimpleGradient,
    SaliencyMethod::IntegratedGradients,
    SaliencyMethod::DeepLift,
];

/// One CSV row of campaign output.
#[derive(Debug, Clone)]
pub struct CampaignRow {
    pub image_id: usize,
    pub method: SaliencyMethod,
    pub attack: String,
    /// Budget in 1/255 units, as configured.
    pub epsilon: f64,
    pub rank_corr: f64,
    pub topk: f64,
    pub k: usize,
    pub center_shift: f64,
    pub pred_preserved: bool,
}

impl CampaignRow {
    pub const HEADER: [&'static str; 9] = [
        "image_id",
        "method",
        "attack",
        "epsilon",
        "rank_corr",
        "top_k",
        "k",
        "center_shift",
        "pred_preserved",
    ];

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.image_id.to_string(),
            self.method.name().to_string(),
            self.attack.clone(),
            fmt_float(self.epsilon),
            fmt_float(self.rank_corr),
            fmt_float(self.topk),
            self.k.to_string(),
            fmt_float(self.center_shift),
            if self.pred_preserved { "1" } else { "0" }.to_string(),
        ]
    }
}

/// Per-image accounting stored in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: usize,
    pub dataset_index: usize,
    pub label: usize,
    pub wall_ms: u128,
}

/// Record of one campaign run: what ran, over which images, and where the
/// artifacts live. Timing fields live here so the CSVs stay byte-stable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec_hash: String,
    pub version: String,
    pub dataset: String,
    pub model_preset: String,
    pub test_accuracy: f64,
    pub methods: Vec<String>,
    pub attacks: Vec<String>,
    pub epsilons: Vec<f64>,
    pub images: Vec<ImageEntry>,
    /// Image ids whose rows were flushed; a partial run lists fewer than
    /// n_images and can be diffed against the spec to resume.
    pub completed: Vec<usize>,
    pub total_wall_ms: u128,
    pub rows_csv: String,
}

/// Loads the dataset splits a spec names.
pub fn resolve_splits(spec: &ExperimentSpec) -> Result<Splits> {
    match spec.dataset {
        DatasetKind::Synthetic => Ok(synth_splits(spec.seed)),
        DatasetKind::Mnist => load_mnist(&data_root(spec.data_dir.as_deref())),
        DatasetKind::Cifar10 => load_cifar10(&data_root(spec.data_dir.as_deref())),
    }
}

/// Loads the checkpoint if it exists, otherwise trains the preset on the
/// train split (saving to the checkpoint path when one was named).
pub fn resolve_model(spec: &ExperimentSpec, train_set: &Dataset) -> Result<Model> {
    if let Some(path) = &spec.checkpoint {
        if path.exists() {
            return Ok(load_model(path)?.0);
        }
    }
    let mut cfg = spec.model_preset.train_config(spec.seed);
    if let Some(epochs) = spec.train_epochs {
        cfg.epochs = epochs;
    }
    let init = build(spec.model_preset, spec.seed)?;
    let (model, _losses) = train(&init, train_set, &cfg)?;
    if let Some(path) = &spec.checkpoint {
        save_model(&model, spec.seed, path)?;
    }
    Ok(model)
}

/// Randomly ordered test indices that the model classifies correctly,
/// truncated to n. Errors if fewer than n are available.
pub fn select_correct(model: &Model, test: &Dataset, n: usize, seed: u64) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.shuffle(&mut chacha(seed ^ 0x00c0_ffee));
    let mut picked = Vec::with_capacity(n);
    for idx in order {
        let probs = model.probabilities(&test.images[idx])?;
        if argmax(&probs) == test.labels[idx] {
            picked.push(idx);
            if picked.len() == n {
                return Ok(picked);
            }
        }
    }
    Err(NnError::config(format!(
        "only {} correctly classified test images available, spec asks for {n}",
        picked.len()
    )))
}

/// Materializes an attack token for a concrete input shape.
pub fn materialize_attack(choice: &AttackChoice, input_shape: &[usize]) -> Result<AttackKind> {
    Ok(match choice {
        AttackChoice::Rand => AttackKind::RandomSign,
        AttackChoice::TopK(k) => AttackKind::TopK {
            k: k.unwrap_or_else(|| default_k(input_shape)),
        },
        AttackChoice::Center => AttackKind::MassCenter,
        AttackChoice::Target { r0, c0, r1, c1 } => {
            let (h, w) = match input_shape {
                [h, w] => (*h, *w),
                [_, h, w] => (*h, *w),
                other => {
                    return Err(NnError::shape("mask grid", &[2], &[other.len()]));
                }
            };
            if *r1 > h || *c1 > w || r0 >= r1 || c0 >= c1 {
                return Err(NnError::config(format!(
                    "mask rectangle {r0}:{c0}:{r1}:{c1} does not fit a {h}x{w} grid"
                )));
            }
            let mut mask = Tensor::zeros(input_shape);
            let channels = if input_shape.len() == 3 {
                input_shape[0]
            } else {
                1
            };
            for ch in 0..channels {
                for r in *r0..*r1 {
                    for c in *c0..*c1 {
                        mask.data[ch * h * w + r * w + c] = 1.0;
                    }
                }
            }
            AttackKind::Targeted { mask }
        }
    })
}

fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut s = base;
    for &p in parts {
        s = s
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .rotate_left(17)
            .wrapping_add(p.wrapping_mul(0x2545_f491_4f6c_dd1d));
    }
    s
}

struct ImageOutput {
    rows: Vec<CampaignRow>,
    pgms: Vec<(String, Tensor)>,
    wall_ms: u128,
}

/// Runs one image through every attack × epsilon × method cell.
fn run_image(
    model: &Model,
    spec: &ExperimentSpec,
    image_id: usize,
    x: &Tensor,
) -> Result<ImageOutput> {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut pgms = Vec::new();
    let reference = ReferencePoint::zeros(&x.shape);
    let max_eps = spec
        .epsilons
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let probs = model.probabilities(x)?;
    let class = argmax(&probs);
    for (attack_idx, choice) in spec.attacks.iter().enumerate() {
        let kind = materialize_attack(choice, &x.shape)?;
        for (eps_idx, &eps) in spec.epsilons.iter().enumerate() {
            for (method_idx, method) in METHODS.iter().enumerate() {
                let mut cfg = AttackConfig::new(
                    kind.clone(),
                    eps / 255.0,
                    spec.alpha / 255.0,
                    spec.iters,
                );
                cfg.method = *method;
                cfg.ig_steps = spec.ig_steps;
                cfg.beta = spec.beta;
                cfg.metric_k = spec.metric_k.min(x.len());
                cfg.seed = mix_seed(
                    spec.seed,
                    &[
                        image_id as u64,
                        attack_idx as u64,
                        eps_idx as u64,
                        method_idx as u64,
                    ],
                );
                let result = iterative_attack(model, x, &cfg)?;
                rows.push(CampaignRow {
                    image_id,
                    method: *method,
                    attack: choice.label().to_string(),
                    epsilon: eps,
                    rank_corr: result.metrics.rank_correlation,
                    topk: result.metrics.topk_intersection,
                    k: result.metrics.k,
                    center_shift: result.metrics.center_shift,
                    pred_preserved: result.prediction_preserved,
                });
                // Saliency renderings for the largest budget: one
                // before/after pair per (attack, method).
                if eps == max_eps {
                    let before = saliency(model, x, *method, &reference, spec.ig_steps, class)?;
                    let after = saliency(
                        model,
                        &result.x_adv,
                        *method,
                        &reference,
                        spec.ig_steps,
                        class,
                    )?;
                    let stem = format!(
                        "saliency_img{:04}_{}_{}",
                        image_id,
                        method.name(),
                        choice.label()
                    );
                    pgms.push((format!("{stem}_before.pgm"), before.values));
                    pgms.push((format!("{stem}_after.pgm"), after.values));
                }
            }
        }
    }
    Ok(ImageOutput {
        rows,
        pgms,
        wall_ms: start.elapsed().as_millis(),
    })
}

/// Writes rows.csv in (image, attack, epsilon, method) order.
pub fn write_rows(path: &Path, rows: &[CampaignRow]) -> Result<()> {
    let fields: Vec<Vec<String>> = rows.iter().map(|r| r.to_fields()).collect();
    write_csv(path, &CampaignRow::HEADER, &fields)
}

/// Reads rows.csv back into typed rows.
pub fn read_rows(path: &Path) -> Result<Vec<CampaignRow>> {
    let (header, raw) = crate::harness::csvutil::read_csv(path)?;
    if header != CampaignRow::HEADER {
        return Err(NnError::config(format!(
            "unexpected rows header: {}",
            header.join(",")
        )));
    }
    let mut rows = Vec::with_capacity(raw.len());
    for (i, fields) in raw.iter().enumerate() {
        if fields.len() != CampaignRow::HEADER.len() {
            return Err(NnError::config(format!("rows.csv line {} malformed", i + 2)));
        }
        let num = |s: &String| {
            s.parse::<f64>()
                .map_err(|_| NnError::config(format!("bad float '{s}' in rows.csv")))
        };
        rows.push(CampaignRow {
            image_id: fields[0]
                .parse()
                .map_err(|_| NnError::config("bad image_id in rows.csv"))?,
            method: SaliencyMethod::parse(&fields[1])?,
            attack: fields[2].clone(),
            epsilon: num(&fields[3])?,
            rank_corr: num(&fields[4])?,
            topk: num(&fields[5])?,
            k: fields[6]
                .parse()
                .map_err(|_| NnError::config("bad k in rows.csv"))?,
            center_shift: num(&fields[7])?,
            pred_preserved: fields[8] == "1",
        });
    }
    Ok(rows)
}

/// Runs a full campaign: train-or-load, select images, attack them all in a
/// worker pool, then flush rows, renderings, manifest, and the report in a
/// deterministic order.
pub fn run_campaign(spec: &ExperimentSpec) -> Result<RunManifest> {
    spec.validate()?;
    let total_start = Instant::now();
    std::fs::create_dir_all(&spec.output_dir)
        .map_err(NnError::io(format!("creating {}", spec.output_dir.display())))?;
    let splits = resolve_splits(spec)?;
    let model = resolve_model(spec, &splits.train)?;
    let test_accuracy = accuracy(&model, &splits.test)?;
    let selected = select_correct(&model, &splits.test, spec.n_images, spec.seed)?;

    // Worker pool over images; collect preserves image order.
    let outputs: Vec<(usize, Result<ImageOutput>)> = selected
        .par_iter()
        .enumerate()
        .map(|(image_id, &ds_idx)| {
            (
                image_id,
                run_image(&model, spec, image_id, &splits.test.images[ds_idx]),
            )
        })
        .collect();

    // Single ordered writer: flush everything that succeeded, then surface
    // the first error (if any) after the partial artifacts are on disk.
    let mut rows = Vec::new();
    let mut images = Vec::new();
    let mut completed = Vec::new();
    let mut first_error = None;
    let pgm_dir = spec.output_dir.join("pgm");
    std::fs::create_dir_all(&pgm_dir)
        .map_err(NnError::io(format!("creating {}", pgm_dir.display())))?;
    for (image_id, output) in outputs {
        match output {
            Ok(out) => {
                rows.extend(out.rows);
                for (name, map) in &out.pgms {
                    write_pgm(&pgm_dir.join(name), map)?;
                }
                images.push(ImageEntry {
                    image_id,
                    dataset_index: selected[image_id],
                    label: splits.test.labels[selected[image_id]],
                    wall_ms: out.wall_ms,
                });
                completed.push(image_id);
            }
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    write_rows(&spec.output_dir.join("rows.csv"), &rows)?;
    let manifest = RunManifest {
        spec_hash: spec.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        dataset: spec.dataset.name().to_string(),
        model_preset: spec.model_preset.name().to_string(),
        test_accuracy,
        methods: METHODS.iter().map(|m| m.name().to_string()).collect(),
        attacks: spec.attacks.iter().map(|a| a.token()).collect(),
        epsilons: spec.epsilons.clone(),
        images,
        completed,
        total_wall_ms: total_start.elapsed().as_millis(),
        rows_csv: "rows.csv".to_string(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| NnError::config(format!("manifest serialization: {e}")))?;
    std::fs::write(spec.output_dir.join("manifest.json"), manifest_json)
        .map_err(NnError::io("writing manifest.json"))?;
    super::report::emit_report(&spec.output_dir)?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}
