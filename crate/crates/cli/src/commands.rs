use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use acdc_core::architecture::{checkpoint, AcdcModel, Variant};
use acdc_core::autodiff::{BnMode, Graph, Scalar};
use acdc_core::data::io::{encode_pgm, load_dataset, save_dataset, MANIFEST};
use acdc_core::data::{generate, Dataset, DatasetSpec, GrayImage, Sample};
use acdc_core::evaluation::evaluate;
use acdc_core::gradcheck::{self, CheckRow};
use acdc_core::training::{Batch, Trainer, LOG_HEADER};
use acdc_core::Error;
use serde::Serialize;

use crate::config::RunConfig;

/// Command failure, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, invalid config, or a checkpoint built for another config.
    Usage(String),
    Runtime(String),
    /// The gradient suite ran and at least one check failed.
    Gradcheck(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Gradcheck(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) | Failure::Gradcheck(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::DigestMismatch => {
                Failure::Usage("checkpoint was written for a different model config (digest mismatch)".into())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub type Outcome = std::result::Result<(), Failure>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn label(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

/// Load the dataset from the run's data directory, generating and saving it
/// first when it is absent.
fn dataset(cfg: &RunConfig, spec: &DatasetSpec) -> Result<Dataset, Failure> {
    let dir = cfg.data_dir(&spec.name);
    if dir.join(MANIFEST).exists() {
        let d = load_dataset(&dir)?;
        if &d.spec != spec {
            return Err(Failure::Runtime(format!(
                "{} holds dataset `{}` generated from a different spec; remove it or run synth",
                dir.display(),
                spec.name
            )));
        }
        return Ok(d);
    }
    eprintln!("generating dataset `{}` ({} samples)", spec.name, spec.size);
    let d = generate(spec)?;
    save_dataset(&dir, &d)?;
    Ok(d)
}

fn eval_spec(cfg: &RunConfig) -> Result<&DatasetSpec, Failure> {
    cfg.eval
        .as_ref()
        .ok_or_else(|| Failure::Usage("the config has no `eval` dataset".into()))
}

pub fn synth(cfg: &RunConfig) -> Outcome {
    for spec in cfg.all_datasets() {
        let dir = cfg.data_dir(&spec.name);
        let d = generate(spec)?;
        save_dataset(&dir, &d)?;
        println!("{}: {} samples", dir.display(), d.samples.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct RunManifest<'a> {
    config: &'a RunConfig,
    precision: &'static str,
    parameters: usize,
    config_digest: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").expect("string write");
        s
    })
}

pub fn train(cfg: &RunConfig, precision: Precision) -> Outcome {
    match precision {
        Precision::F32 => train_as::<f32>(cfg, precision),
        Precision::F64 => train_as::<f64>(cfg, precision),
    }
}

fn train_as<T: Scalar>(cfg: &RunConfig, precision: Precision) -> Outcome {
    let datasets = cfg
        .datasets
        .iter()
        .map(|s| dataset(cfg, s))
        .collect::<Result<Vec<_>, _>>()?;
    let model = AcdcModel::<T>::new(cfg.model.clone(), cfg.train.seed)?;
    let dir = cfg.train_dir();
    let manifest = RunManifest {
        config: cfg,
        precision: precision.label(),
        parameters: model.parameter_count(),
        config_digest: hex(&cfg.model.digest()),
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    write_file(&dir.join("run.json"), text)?;

    let log_path = dir.join("train_log.csv");
    let mut log = fs::File::create(&log_path)?;
    writeln!(log, "{LOG_HEADER}")?;
    let every = cfg.train.checkpoint_every;
    let total = cfg.train.updates;
    let mut trainer = Trainer::new(model, &datasets, cfg.train.clone())?;
    trainer.run(|rec, model| {
        writeln!(log, "{}", rec.csv_row())?;
        if every > 0 && rec.update % every == 0 && rec.update < total {
            let path = dir.join("checkpoints").join(format!("update-{:06}.acdc", rec.update));
            fs::create_dir_all(path.parent().expect("has parent"))?;
            checkpoint::save(model, &path)?;
        }
        if rec.update % 100 == 0 || rec.update == total {
            eprintln!("update {}/{} loss {:.5}", rec.update, total, rec.loss_total);
        }
        Ok(())
    })?;
    log.flush()?;
    let model = trainer.into_model();
    checkpoint::save(&model, &cfg.final_checkpoint())?;
    println!("{}", cfg.final_checkpoint().display());
    Ok(())
}

fn load_model<T: Scalar>(cfg: &RunConfig, path: &Path) -> Result<AcdcModel<T>, Failure> {
    let f32_model: AcdcModel<f32> = checkpoint::load(cfg.model.clone(), path)
        .map_err(|e| match e {
            Error::Io(io) => Failure::Runtime(format!("{}: {io}", path.display())),
            other => other.into(),
        })?;
    Ok(f32_model.cast())
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, precision: Precision) -> Outcome {
    match precision {
        Precision::F32 => eval_as::<f32>(cfg, checkpoint),
        Precision::F64 => eval_as::<f64>(cfg, checkpoint),
    }
}

fn eval_as<T: Scalar>(cfg: &RunConfig, checkpoint: &Path) -> Outcome {
    let mut model = load_model::<T>(cfg, checkpoint)?;
    let eval_spec = eval_spec(cfg)?;
    let mut report = String::new();
    let mut pose = String::new();
    // The held-out set first, then the training sets for comparison.
    for spec in std::iter::once(eval_spec).chain(&cfg.datasets) {
        let data = dataset(cfg, spec)?;
        let ev = evaluate(&mut model, &data, cfg.eval_batch)?;
        append_tagged(&mut report, &spec.name, &ev.report_csv()?);
        append_tagged(&mut pose, &spec.name, &ev.pose_csv()?);
        if let Some(finest) = data.spec.markups.iter().find(|m| m.as_str() != acdc_core::architecture::MARKUP_3D) {
            let last = ev.stages() - 1;
            println!(
                "{}: stage-1 NME {:.5}, stage-{} NME {:.5} ({})",
                spec.name,
                ev.nme(0, finest)?,
                last + 1,
                ev.nme(last, finest)?,
                finest
            );
        }
    }
    let dir = cfg.output.join("eval");
    write_file(&dir.join("report.csv"), report)?;
    write_file(&dir.join("pose_mae.csv"), pose)?;
    println!("{}", dir.display());
    Ok(())
}

/// Prefix every row with `dataset`, keeping one header.
fn append_tagged(out: &mut String, dataset: &str, csv: &str) {
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default();
    if out.is_empty() {
        writeln!(out, "dataset,{header}").expect("string write");
    }
    for l in lines {
        writeln!(out, "{dataset},{l}").expect("string write");
    }
}

pub fn gradcheck(cfg: Option<&RunConfig>, seed: u64, out: Option<&Path>, faulty: bool) -> Outcome {
    let model_cfg = cfg.map_or_else(acdc_core::architecture::ModelConfig::toy, |c| c.model.clone());
    let mut rows = gradcheck::run_registry(seed)?;
    if faulty {
        rows.push(gradcheck::custom_square_check("custom_corrupted", 3.0, seed).run(seed)?);
    }
    let model = gradcheck::end_to_end(&model_cfg, seed, 1)?;
    eprintln!("end-to-end: {} entries skipped at kinks", model.kinks);
    rows.push(model.row);
    let csv = gradcheck::report_csv(&rows);
    print!("{csv}");
    if let Some(dir) = out {
        write_file(&dir.join("gradcheck").join("report.csv"), &csv)?;
    }
    let failed: Vec<&CheckRow> = rows.iter().filter(|r| !r.passed()).collect();
    if failed.is_empty() {
        return Ok(());
    }
    let list = failed
        .iter()
        .map(|r| format!("{} (max relative error {:e})", r.operation, r.max_rel_error))
        .collect::<Vec<_>>()
        .join(", ");
    Err(Failure::Gradcheck(format!("gradient check failed: {list}")))
}

fn mask_pgm(mask: &[f64], size: usize) -> Vec<u8> {
    encode_pgm(&GrayImage {
        width: size,
        height: size,
        pixels: mask.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
    })
}

pub fn export(cfg: &RunConfig, checkpoint: &Path, sample: usize, out: &Path) -> Outcome {
    let mut model = load_model::<f32>(cfg, checkpoint)?;
    let data = dataset(cfg, eval_spec(cfg)?)?;
    let s: &Sample = data
        .samples
        .get(sample)
        .ok_or_else(|| Failure::Usage(format!("sample {sample} out of range (dataset has {})", data.samples.len())))?;
    let batch: Batch<f32> = Batch::from_samples(&[s], model.chain())?;
    let mut g = Graph::new();
    let x = g.constant(batch.images.clone());
    let stages = model.forward(&mut g, x, BnMode::Infer)?;
    let size = cfg.model.image_size;
    let value = |g: &Graph<f32>, v| -> Vec<f64> { g.value(v).data().iter().map(|x| x.to_f64_lossy()).collect() };

    let (in_ch, width) = (cfg.model.in_channels, cfg.model.widths[0]);
    let blocks = [("image", in_ch), ("image_masked", in_ch), ("embedding", width), ("embedding_masked", width)];
    let mut landmarks = String::from("stage,markup,landmark,x,y\n");
    let mut written = Vec::new();
    for st in &stages {
        let path = out.join(format!("mask_stage{}.pgm", st.stage));
        write_file(&path, mask_pgm(&value(&g, st.mask), size))?;
        written.push(path);
        if let Some(e) = st.input_excitation {
            let vals = value(&g, e);
            let mut csv = String::from("channel,block,block_channel,excitation\n");
            let mut channel = 0;
            for (name, n) in blocks {
                for k in 0..n {
                    writeln!(csv, "{channel},{name},{k},{}", vals[channel]).expect("string write");
                    channel += 1;
                }
            }
            let path = out.join(format!("excitation_stage{}.csv", st.stage));
            write_file(&path, csv)?;
            written.push(path);
        }
        for (k, m) in model.chain().all().enumerate() {
            let lm = value(&g, st.landmarks(k));
            for (i, p) in lm.chunks(2).enumerate() {
                writeln!(landmarks, "{},{},{i},{},{}", st.stage, m.name, p[0], p[1]).expect("string write");
            }
        }
    }
    let path = out.join("landmarks.csv");
    write_file(&path, landmarks)?;
    written.push(path);
    if cfg.model.variant != Variant::AcDc {
        eprintln!("variant `{}` has no excitation; no excitation CSVs written", cfg.model.variant.label());
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

/// Default export directory below the run root.
pub fn export_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output.join("export")
}
