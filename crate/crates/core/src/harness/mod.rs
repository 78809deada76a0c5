//! Config-driven experiment runner behind the `sraw` binary.
//!
//! Everything lands under `output.root`:
//!
//! ```text
//! data/                      images/, masks/, manifest.csv
//! models/{model}.bin
//! attacks/{method}/{model}/  records.csv, loss_traces.csv, images/{id}.pgm
//! tables/                    train_accuracy.csv, transfer_{method}.csv, report.csv
//! figures/{method}/{model}/  {id}_benign.pgm, {id}_adversarial.pgm, {id}_diff.pgm
//! gradcam/                   {id}_clean.pgm, {id}_{method}.pgm
//! timings/                   wall-clock measurements
//! ```
//!
//! Every file outside `timings/` is a deterministic function of the config.

pub mod config;
mod csvio;

pub use config::ExperimentConfig;
pub use csvio::{format_float, read_records, RecordRow, RECORD_HEADER};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::attack::{pixel_attack, random_warp_control, sraw_attack, AttackResult, PixelAttackConfig};
use crate::data::{
    generate_synthetic_dataset_with, load_dataset, load_pgm, quantize16, save_dataset, save_pgm,
    train_test_split, Chip, SynthOptions, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::metrics::{attack_success_rate, psnr, ssim, EvalRecord};
use crate::net::{grad_cam, load_params, save_params, train, Arch, Classifier, NetParams, TrainConfig};
use crate::rng::{derive_seed, stream};

/// Attack methods the runner knows, in pipeline order.
pub const METHODS: [&str; 5] = ["sraw", "fgsm", "pgd", "mifgsm", "randwarp"];

/// Paths of one experiment's outputs.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            root: cfg.output.root.clone(),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn model_path(&self, model: &str) -> PathBuf {
        self.root.join("models").join(format!("{model}.bin"))
    }

    pub fn attack_dir(&self, method: &str, model: &str) -> PathBuf {
        self.root.join("attacks").join(method).join(model)
    }

    pub fn tables_dir(&self) -> PathBuf {
        self.root.join("tables")
    }

    pub fn figures_dir(&self, method: &str, model: &str) -> PathBuf {
        self.root.join("figures").join(method).join(model)
    }

    pub fn gradcam_dir(&self) -> PathBuf {
        self.root.join("gradcam")
    }

    pub fn timings_dir(&self) -> PathBuf {
        self.root.join("timings")
    }
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn check_method(method: &str) -> Result<()> {
    if METHODS.contains(&method) {
        Ok(())
    } else {
        Err(Error::Usage(format!(
            "unknown method `{method}`; valid methods: {}",
            METHODS.join(", ")
        )))
    }
}

fn manifest_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.data
        .manifest
        .clone()
        .unwrap_or_else(|| Layout::new(cfg).data_dir().join(MANIFEST_FILE))
}

/// Generates the synthetic dataset and writes it under `data/`.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let d = &cfg.data;
    let chips = generate_synthetic_dataset_with(
        d.num_classes,
        d.chips_per_class,
        d.chip_side,
        cfg.seeds.data,
        &SynthOptions {
            speckle_correlation: d.speckle_correlation,
            target_looks: d.target_looks,
        },
    )?;
    save_dataset(&chips, Layout::new(cfg).data_dir())
}

/// Loads the dataset and applies the configured split. The test side is
/// truncated to `eval.max_test_samples`.
pub fn load_split(cfg: &ExperimentConfig) -> Result<(Vec<Chip>, Vec<Chip>)> {
    let chips = load_dataset(manifest_path(cfg))?;
    let side = cfg.data.chip_side;
    if let Some(c) = chips.iter().find(|c| c.image.height() != side || c.image.width() != side) {
        return Err(Error::invalid(format!(
            "chip `{}` is {}x{}, config expects {side}x{side}",
            c.id,
            c.image.height(),
            c.image.width()
        )));
    }
    let (train, mut test) = train_test_split(&chips, cfg.data.test_fraction, cfg.seeds.data)?;
    if let Some(n) = cfg.eval.max_test_samples {
        test.truncate(n);
    }
    Ok((train, test))
}

pub fn model_names(cfg: &ExperimentConfig) -> Vec<String> {
    cfg.model.variants.iter().map(|v| v.name.clone()).collect()
}

/// Resolves `name` to a configured variant's weights file, or treats it as
/// a path.
pub fn resolve_model(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    if cfg.model.variants.iter().any(|v| v.name == name) {
        Layout::new(cfg).model_path(name)
    } else {
        PathBuf::from(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub name: String,
    pub test_accuracy: f64,
    pub final_train_loss: f64,
}

fn pairs(chips: &[Chip]) -> Vec<(&GrayImage, usize)> {
    chips.iter().map(|c| (&c.image, c.label)).collect()
}

/// Trains every configured variant, saves weights and writes
/// `tables/train_accuracy.csv`.
pub fn train_models(cfg: &ExperimentConfig) -> Result<Vec<TrainedModel>> {
    let layout = Layout::new(cfg);
    let (train_set, test_set) = load_split(cfg)?;
    let num_classes = train_set.iter().chain(&test_set).map(|c| c.label).max().unwrap_or(0) + 1;
    let train_cfg = TrainConfig::from(&cfg.model.train);
    let mut out = Vec::new();
    let mut table = String::from("model,widths,parameters,test_accuracy,final_train_loss\n");
    let mut timings = String::from("model,seconds\n");
    for (i, variant) in cfg.model.variants.iter().enumerate() {
        let arch = Arch::new(variant.widths.clone(), num_classes, cfg.data.chip_side)?;
        let start = Instant::now();
        let (params, report) = train(
            &pairs(&train_set),
            &pairs(&test_set),
            arch,
            &train_cfg,
            derive_seed(cfg.seeds.train, i as u64),
        )?;
        timings.push_str(&format!("{},{:.3}\n", variant.name, start.elapsed().as_secs_f64()));
        let path = layout.model_path(&variant.name);
        create_dir(path.parent().expect("model path has a parent"))?;
        save_params(&params, &path)?;
        let model = TrainedModel {
            name: variant.name.clone(),
            test_accuracy: report.validation_accuracy.unwrap_or(f64::NAN),
            final_train_loss: *report.epoch_loss.last().expect("at least one epoch"),
        };
        table.push_str(&format!(
            "{},{},{},{},{}\n",
            model.name,
            variant.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-"),
            params.num_parameters(),
            format_float(model.test_accuracy),
            format_float(model.final_train_loss),
        ));
        out.push(model);
    }
    write_file(&layout.tables_dir().join("train_accuracy.csv"), &table)?;
    write_file(&layout.timings_dir().join("train.csv"), &timings)?;
    Ok(out)
}

/// Runs one method against one classifier on one chip. `index` selects the
/// chip's random stream.
pub fn run_method<C: Classifier + ?Sized>(
    cfg: &ExperimentConfig,
    method: &str,
    model: &C,
    chip: &Chip,
    index: usize,
) -> Result<AttackResult> {
    check_method(method)?;
    let a = &cfg.attack;
    let pixel = |block: &PixelAttackConfig| {
        let seed = derive_seed(derive_seed(cfg.seeds.attack, block.seed), index as u64);
        pixel_attack(model, &chip.image, chip.label, &PixelAttackConfig { seed, ..block.clone() })
    };
    let sraw_seed = derive_seed(derive_seed(cfg.seeds.attack, a.sraw.seed), index as u64);
    match method {
        "sraw" => {
            let c = crate::attack::SrawConfig { seed: sraw_seed, ..a.sraw.clone() };
            sraw_attack(model, &chip.image, chip.label, &chip.mask, &c)
        }
        "randwarp" => random_warp_control(model, &chip.image, chip.label, &chip.mask, &a.sraw, &mut stream(sraw_seed, 1)),
        "fgsm" => pixel(&a.fgsm),
        "pgd" => pixel(&a.pgd),
        "mifgsm" => pixel(&a.mifgsm),
        _ => unreachable!("method checked above"),
    }
}

/// Per-sample outcome as stored in `records.csv`.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub record: RecordRow,
    pub adversarial: GrayImage,
    pub loss_trace: Vec<f64>,
    pub seconds: f64,
}

/// Attacks every test chip with `method` against `model`. The stored
/// adversarial is the 16-bit quantized image, and predictions and quality
/// scores refer to it.
pub fn attack_chips<C: Classifier + ?Sized>(
    cfg: &ExperimentConfig,
    method: &str,
    model: &C,
    chips: &[Chip],
) -> Result<Vec<SampleOutcome>> {
    check_method(method)?;
    chips
        .par_iter()
        .enumerate()
        .map(|(i, chip)| {
            let start = Instant::now();
            let result = run_method(cfg, method, model, chip, i)?;
            let adversarial = quantize16(&result.adversarial);
            let adversarial_prediction = model.predict(&adversarial)?;
            let seconds = start.elapsed().as_secs_f64();
            Ok(SampleOutcome {
                record: RecordRow {
                    id: chip.id.clone(),
                    label: chip.label,
                    clean_prediction: result.clean_prediction,
                    adversarial_prediction,
                    success: adversarial_prediction != result.clean_prediction,
                    final_loss: *result.loss_trace.last().unwrap_or(&f64::NAN),
                    queries: result.query_count,
                    psnr: psnr(&chip.image, &adversarial)?,
                    ssim: ssim(&chip.image, &adversarial)?,
                },
                adversarial,
                loss_trace: result.loss_trace,
                seconds,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSummary {
    pub method: String,
    pub model: String,
    pub asr: Option<f64>,
    pub samples: usize,
}

/// Runs `method` against each named model over the test split and writes
/// records, loss traces and adversarial images.
pub fn attack(cfg: &ExperimentConfig, method: &str, models: &[String]) -> Result<Vec<AttackSummary>> {
    check_method(method)?;
    let layout = Layout::new(cfg);
    let (_, test) = load_split(cfg)?;
    let mut summaries = Vec::new();
    for name in models {
        let params = load_params(resolve_model(cfg, name))?;
        let outcomes = attack_chips(cfg, method, &params, &test)?;
        let dir = layout.attack_dir(method, name);
        create_dir(&dir.join("images"))?;
        let mut records = String::from(RECORD_HEADER);
        records.push('\n');
        let mut traces = String::from("id,iteration,loss\n");
        let mut timings = String::from("id,seconds\n");
        for o in &outcomes {
            records.push_str(&o.record.to_csv_line());
            records.push('\n');
            for (t, l) in o.loss_trace.iter().enumerate() {
                traces.push_str(&format!("{},{t},{}\n", o.record.id, format_float(*l)));
            }
            timings.push_str(&format!("{},{:.6}\n", o.record.id, o.seconds));
            save_pgm(&o.adversarial, dir.join("images").join(format!("{}.pgm", o.record.id)), 16)?;
        }
        write_file(&dir.join("records.csv"), &records)?;
        write_file(&dir.join("loss_traces.csv"), &traces)?;
        write_file(&layout.timings_dir().join(format!("attack_{method}_{name}.csv")), &timings)?;
        let evals: Vec<EvalRecord> = outcomes.iter().map(|o| o.record.eval_record()).collect();
        summaries.push(AttackSummary {
            method: method.to_string(),
            model: name.clone(),
            asr: attack_success_rate(&evals)?,
            samples: outcomes.len(),
        });
    }
    Ok(summaries)
}

/// `acc[s][t]`: accuracy of model `t` on image set `s`.
pub fn transfer_matrix<C: Classifier>(sources: &[Vec<(GrayImage, usize)>], models: &[C]) -> Result<Vec<Vec<f64>>> {
    sources
        .iter()
        .map(|set| {
            if set.is_empty() {
                return Err(Error::invalid("empty image set in transfer evaluation"));
            }
            models
                .iter()
                .map(|m| {
                    let hits = set
                        .par_iter()
                        .map(|(x, y)| m.predict(x).map(|p| usize::from(p == *y)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(hits.iter().sum::<usize>() as f64 / set.len() as f64)
                })
                .collect()
        })
        .collect()
}

/// Loads the adversarial images `attack` stored for `method` on `model`,
/// labeled from its records.
pub fn load_adversarial_set(cfg: &ExperimentConfig, method: &str, model: &str) -> Result<Vec<(GrayImage, usize)>> {
    let dir = Layout::new(cfg).attack_dir(method, model);
    read_records(dir.join("records.csv"))?
        .into_iter()
        .map(|r| Ok((load_pgm(dir.join("images").join(format!("{}.pgm", r.id)))?, r.label)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub method: String,
    pub models: Vec<String>,
    /// Rows are surrogates, columns targets.
    pub accuracy: Vec<Vec<f64>>,
}

/// Evaluates each model's stored `method` adversarials on every model and
/// writes `tables/transfer_{method}.csv`.
pub fn transfer(cfg: &ExperimentConfig, method: &str, models: &[String]) -> Result<TransferMatrix> {
    check_method(method)?;
    let params = models
        .iter()
        .map(|m| load_params(resolve_model(cfg, m)))
        .collect::<Result<Vec<NetParams>>>()?;
    let sources = models
        .iter()
        .map(|m| load_adversarial_set(cfg, method, m))
        .collect::<Result<Vec<_>>>()?;
    let accuracy = transfer_matrix(&sources, &params)?;
    let mut csv = format!("surrogate,{}\n", models.join(","));
    for (name, row) in models.iter().zip(&accuracy) {
        let cells: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
        csv.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    write_file(&Layout::new(cfg).tables_dir().join(format!("transfer_{method}.csv")), &csv)?;
    Ok(TransferMatrix {
        method: method.to_string(),
        models: models.to_vec(),
        accuracy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub model: String,
    pub asr: Option<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_seconds: Option<f64>,
}

/// Mean per-sample wall time from `timings/attack_{method}_{model}.csv`.
fn mean_seconds(layout: &Layout, method: &str, model: &str) -> Option<f64> {
    let text = fs::read_to_string(layout.timings_dir().join(format!("attack_{method}_{model}.csv"))).ok()?;
    let values: Vec<f64> = text
        .lines()
        .skip(1)
        .filter_map(|l| l.rsplit(',').next()?.parse().ok())
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Benign, adversarial and amplified absolute difference.
pub fn difference_image(benign: &GrayImage, adversarial: &GrayImage, amplification: f64) -> Result<GrayImage> {
    if benign.height() != adversarial.height() || benign.width() != adversarial.width() {
        return Err(Error::invalid("difference of differently sized images"));
    }
    let data = benign
        .data()
        .iter()
        .zip(adversarial.data())
        .map(|(a, b)| (amplification * (a - b).abs()).min(1.0))
        .collect();
    GrayImage::new(benign.height(), benign.width(), data)
}

/// Aggregates stored records into `tables/report.csv` and exports the
/// first `eval.report_samples` comparisons of each (method, model) pair.
pub fn report(cfg: &ExperimentConfig, methods: &[String], models: &[String]) -> Result<Vec<ReportRow>> {
    let layout = Layout::new(cfg);
    let (_, test) = load_split(cfg)?;
    let mut rows = Vec::new();
    let mut csv = String::from("method,model,asr,mean_psnr,mean_ssim,lpips\n");
    let mut timing_csv = String::from("method,model,mean_seconds\n");
    for method in methods {
        check_method(method)?;
        for model in models {
            let dir = layout.attack_dir(method, model);
            let records = read_records(dir.join("records.csv"))?;
            if records.is_empty() {
                return Err(Error::format(dir.join("records.csv"), "no records"));
            }
            let evals: Vec<EvalRecord> = records.iter().map(RecordRow::eval_record).collect();
            let n = records.len() as f64;
            let row = ReportRow {
                method: method.clone(),
                model: model.clone(),
                asr: attack_success_rate(&evals)?,
                mean_psnr: records.iter().map(|r| r.psnr).sum::<f64>() / n,
                mean_ssim: records.iter().map(|r| r.ssim).sum::<f64>() / n,
                mean_seconds: mean_seconds(&layout, method, model),
            };
            csv.push_str(&format!(
                "{},{},{},{},{},n/a\n",
                row.method,
                row.model,
                row.asr.map_or("n/a".into(), format_float),
                format_float(row.mean_psnr),
                format_float(row.mean_ssim),
            ));
            timing_csv.push_str(&format!(
                "{},{},{}\n",
                row.method,
                row.model,
                row.mean_seconds.map_or("n/a".into(), |s| format!("{s:.6}"))
            ));

            let figures = layout.figures_dir(method, model);
            create_dir(&figures)?;
            for r in records.iter().take(cfg.eval.report_samples) {
                let benign = &test
                    .iter()
                    .find(|c| c.id == r.id)
                    .ok_or_else(|| Error::format(dir.join("records.csv"), format!("unknown sample `{}`", r.id)))?
                    .image;
                let adversarial = load_pgm(dir.join("images").join(format!("{}.pgm", r.id)))?;
                save_pgm(benign, figures.join(format!("{}_benign.pgm", r.id)), 16)?;
                save_pgm(&adversarial, figures.join(format!("{}_adversarial.pgm", r.id)), 16)?;
                let diff = difference_image(benign, &adversarial, cfg.eval.diff_amplification)?;
                save_pgm(&diff, figures.join(format!("{}_diff.pgm", r.id)), 8)?;
            }
            rows.push(row);
        }
    }
    write_file(&layout.tables_dir().join("report.csv"), &csv)?;
    write_file(&layout.timings_dir().join("report.csv"), &timing_csv)?;
    Ok(rows)
}

/// Grad-CAM heatmap of `class` on one image as an 8-bit PGM.
pub fn gradcam(model_path: &Path, image_path: &Path, class: usize, out: &Path) -> Result<()> {
    let params = load_params(model_path)?;
    let image = load_pgm(image_path)?;
    let side = params.arch().input_side;
    if image.height() != side || image.width() != side {
        return Err(Error::invalid(format!(
            "image is {}x{}, model expects {side}x{side}",
            image.height(),
            image.width()
        )));
    }
    if class >= params.arch().num_classes {
        return Err(Error::invalid(format!(
            "class {class} out of range for {} classes",
            params.arch().num_classes
        )));
    }
    let heat = grad_cam(&params, &image, class)?;
    let heat = GrayImage::new(heat.height(), heat.width(), heat.into_data())?;
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    save_pgm(&heat, out, 8)
}

/// gen-data (unless an external manifest is configured), train, every
/// configured attack on every model, transfer, report, and Grad-CAM maps
/// for the first reported samples on the first model.
pub fn pipeline(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.data.manifest.is_none() {
        gen_data(cfg)?;
    }
    train_models(cfg)?;
    let models = model_names(cfg);
    for method in &cfg.eval.methods {
        attack(cfg, method, &models)?;
    }
    let transfer_method = &cfg.eval.transfer_method;
    if !cfg.eval.methods.contains(transfer_method) {
        attack(cfg, transfer_method, &models)?;
    }
    transfer(cfg, transfer_method, &models)?;
    report(cfg, &cfg.eval.methods, &models)?;

    let layout = Layout::new(cfg);
    let (_, test) = load_split(cfg)?;
    let first = &models[0];
    let model_path = layout.model_path(first);
    for chip in test.iter().take(cfg.eval.report_samples) {
        let adversarial = layout.attack_dir(transfer_method, first).join("images").join(format!("{}.pgm", chip.id));
        let benign = layout.figures_dir(transfer_method, first).join(format!("{}_benign.pgm", chip.id));
        if !benign.exists() {
            save_pgm(&chip.image, &benign, 16)?;
        }
        gradcam(&model_path, &benign, chip.label, &layout.gradcam_dir().join(format!("{}_clean.pgm", chip.id)))?;
        gradcam(
            &model_path,
            &adversarial,
            chip.label,
            &layout.gradcam_dir().join(format!("{}_{transfer_method}.pgm", chip.id)),
        )?;
    }
    Ok(())
}
