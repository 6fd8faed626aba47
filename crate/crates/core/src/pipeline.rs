//! Stage runners over a stamped run directory.
//!
//! Layout of a run:
//!
//! ```text
//! <root>/<stamp>-seed<seed>/
//!   config.toml            resolved configuration
//!   corpus/                thermal/, rgb/, manifest.json
//!   dataset/               ShareGPT splits, annotations, images
//!   pretrain/              backbone.ckpt, report.json, curve.csv
//!   align-<steps>/         projector checkpoints, curves, selection
//!   eval-<label>/          results.json, responses.jsonl
//!   habitat-<label>/       reports.jsonl
//!   report/                metrics.json, table2.csv, table3.csv, SVGs
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{batch_infer, Backend, ImageSource, InferenceRequest, LocalBackend, RemoteBackend};
use crate::config::{BackendKind, PipelineConfig};
use crate::dataset::{self, AnnotationRecord, Dataset};
use crate::error::{Error, Result};
use crate::evalkit::{self, parse_habitat, render_prompt, EvalItem, EvaluationResult, HabitatReport, PromptMode, ReportTables};
use crate::model::checkpoint::TensorSelection;
use crate::model::{pretrain_backbones_with, Checkpoint, PretrainReport, ToyVlm, Vocabulary};
use crate::scenegen::{self, ManifestRecord};
use crate::train::{self, loss_svg, CurveKind, LossCurve, RunArtifacts, Sample, SampleInput};
use crate::{fsio, imageio};

pub const CONFIG_FILE: &str = "config.toml";
pub const CORPUS_DIR: &str = "corpus";
pub const DATASET_DIR: &str = "dataset";
pub const PRETRAIN_DIR: &str = "pretrain";
pub const BACKBONE_FILE: &str = "backbone.ckpt";
pub const REPORT_DIR: &str = "report";
pub const RESULTS_FILE: &str = "results.json";

/// Seed of the freshly built model before pretraining.
const MODEL_INIT_STREAM: u64 = 0x1A17;

pub fn align_dir_name(max_steps: u64) -> String {
    format!("align-{max_steps}")
}

#[derive(Clone, Debug)]
pub struct Run {
    pub dir: PathBuf,
    pub config: PipelineConfig,
}

impl Run {
    /// Resolves and validates `config`, then creates a fresh directory under
    /// its output root. Existing directories are never reused.
    pub fn create(config: PipelineConfig) -> Result<Self> {
        let config = config.resolved();
        config.validate()?;
        fsio::create_dir_all(&config.output_root)?;
        let stamp = format!("{}-seed{}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"), config.seed);
        let mut n = 0;
        let dir = loop {
            let name = if n == 0 { stamp.clone() } else { format!("{stamp}-{n}") };
            let dir = config.output_root.join(name);
            match std::fs::create_dir(&dir) {
                Ok(()) => break dir,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(Error::io(&dir, e)),
            }
        };
        fsio::write_atomic(&dir.join(CONFIG_FILE), config.to_toml().as_bytes())?;
        Ok(Self { dir, config })
    }

    /// Re-opens a run from its configuration echo.
    pub fn open(dir: &Path) -> Result<Self> {
        let config = PipelineConfig::load(&dir.join(CONFIG_FILE))?;
        config.validate()?;
        Ok(Self { dir: dir.to_path_buf(), config })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Creates a stage directory, refusing to overwrite one.
    fn new_stage(&self, name: &str) -> Result<PathBuf> {
        let dir = self.path(name);
        if dir.exists() {
            return Err(Error::Config(format!("{} already exists; run artifacts are never overwritten", dir.display())));
        }
        fsio::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn require(&self, name: &str, stage: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.exists() {
            return Err(Error::Config(format!("{} is missing; run `{stage}` first", p.display())));
        }
        Ok(p)
    }
}

pub fn gen_data(run: &Run) -> Result<Vec<ManifestRecord>> {
    let dir = run.new_stage(CORPUS_DIR)?;
    scenegen::generate_corpus(&run.config.scenegen, &dir)
}

pub fn build_dataset(run: &Run) -> Result<Dataset> {
    let corpus = run.require(CORPUS_DIR, "gen-data")?;
    let manifest = scenegen::load_manifest(&corpus.join(scenegen::corpus::MANIFEST_FILE))?;
    let records: Vec<AnnotationRecord> = manifest.iter().map(AnnotationRecord::from_manifest).collect();
    let ds = dataset::build_dataset(&records, &run.config.dataset)?;
    let dir = run.new_stage(DATASET_DIR)?;
    dataset::materialize_images(&ds.splits, &corpus, &dir)?;
    dataset::persist(&ds, &dir)?;
    Ok(ds)
}

/// Builds the model, pretrains it on colour scenes and stores the frozen
/// backbones with their re-initialized projector.
pub fn pretrain(run: &Run, progress: &mut dyn FnMut(u64, f64)) -> Result<PretrainReport> {
    let cfg = &run.config;
    let mut model = ToyVlm::new(cfg.model.clone(), Vocabulary::default(), crate::seeds::derive(cfg.seed, MODEL_INIT_STREAM))?;
    let report = pretrain_backbones_with(&mut model, &cfg.pretrain, progress)?;
    let dir = run.new_stage(PRETRAIN_DIR)?;
    Checkpoint::from_model(&model, TensorSelection::All).save(&dir.join(BACKBONE_FILE))?;
    fsio::write_atomic(&dir.join("curve.csv"), report.curve.to_csv().as_bytes())?;
    fsio::write_json_atomic(&dir.join("config.json"), &cfg.pretrain)?;
    fsio::write_json_atomic(&dir.join("report.json"), &serde_json::json!({
        "steps": report.steps,
        "initial_loss_per_token": report.initial_loss_per_token,
        "final_smoothed_loss": report.final_smoothed_loss,
        "held_out": report.held_out,
    }))?;
    Ok(report)
}

pub fn load_backbone(run: &Run) -> Result<ToyVlm> {
    let dir = run.require(PRETRAIN_DIR, "pretrain")?;
    Checkpoint::load(&dir.join(BACKBONE_FILE))?.into_model()
}

fn samples(model: &ToyVlm, dir: &Path, examples: &[dataset::ConversationExample]) -> Result<Vec<Sample>> {
    examples
        .iter()
        .map(|ex| {
            let image = imageio::load_png(&dir.join(&ex.images[0]))?;
            Sample::from_text(model, SampleInput::Image(image), &ex.user_text, &ex.assistant_text)
        })
        .collect()
}

/// Projector-only alignment on the thermal training split.
pub fn align(run: &Run) -> Result<RunArtifacts> {
    let ds_dir = run.require(DATASET_DIR, "build-dataset")?;
    let ds = dataset::load(&ds_dir)?;
    let mut model = load_backbone(run)?;
    let train_s = samples(&model, &ds_dir, &ds.train)?;
    let val_s = samples(&model, &ds_dir, &ds.val)?;
    let dir = run.new_stage(&align_dir_name(run.config.align.max_steps))?;
    train::train_projector(&mut model, &train_s, &val_s, &run.config.align, Some(&dir))
}

/// The backbone with the projector selected by an alignment run.
pub fn aligned_model(run: &Run, max_steps: u64) -> Result<(ToyVlm, u64)> {
    let dir = run.require(&align_dir_name(max_steps), "align")?;
    let selected: u64 = fsio::read_to_string(&dir.join("selected.txt"))?
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", dir.join("selected.txt").display())))?;
    let mut model = load_backbone(run)?;
    Checkpoint::load(&train::checkpoint_dir(&dir, selected).join(train::CHECKPOINT_FILE))?.apply_to(&mut model)?;
    Ok((model, selected))
}

/// Test-split items with their thermal images on disk.
pub fn test_items(run: &Run) -> Result<Vec<EvalItem>> {
    let ds_dir = run.require(DATASET_DIR, "build-dataset")?;
    let ds = dataset::load(&ds_dir)?;
    Ok(ds
        .splits
        .test
        .iter()
        .map(|r| EvalItem {
            image_id: r.image_id.clone(),
            image: ImageSource::Path(ds_dir.join(&r.image_path)),
            species: r.species,
            count: r.count,
        })
        .collect())
}

fn make_backend(run: &Run, kind: BackendKind) -> Result<(Box<dyn Backend>, String)> {
    match kind {
        BackendKind::Local => {
            let steps = run.config.align.max_steps;
            let (model, _) = aligned_model(run, steps)?;
            let label = format!("toy-vlm-align{steps}");
            Ok((Box::new(LocalBackend::new(model, label.clone())), format!("local-align{steps}")))
        }
        BackendKind::Remote => {
            let cfg = run.config.eval.remote.clone();
            let label = format!("remote-{}", sanitize(&cfg.model));
            Ok((Box::new(RemoteBackend::new(cfg)?), label))
        }
    }
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// Evaluates every configured prompt mode on the test split.
pub fn eval(run: &Run, kind: BackendKind, modes: &[PromptMode]) -> Result<Vec<EvaluationResult>> {
    let items = test_items(run)?;
    let (backend, label) = make_backend(run, kind)?;
    let results = modes
        .iter()
        .map(|&m| evalkit::evaluate(backend.as_ref(), &items, m, run.config.eval.parallelism))
        .collect::<Result<Vec<_>>>()?;
    let dir = run.new_stage(&format!("eval-{label}"))?;
    fsio::write_json_atomic(&dir.join(RESULTS_FILE), &results)?;
    evalkit::write_responses(&dir.join("responses.jsonl"), &results)?;
    Ok(results)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HabitatRecord {
    pub image_id: String,
    pub raw_text: Option<String>,
    pub report: Option<HabitatReport>,
    pub error: Option<String>,
}

/// Sends the colour twin of every test image with the habitat prompt and
/// parses the four-line answers. Only remote backends produce free text.
pub fn habitat(run: &Run, kind: BackendKind) -> Result<Vec<HabitatRecord>> {
    if kind == BackendKind::Local {
        return Err(Error::Config("habitat descriptions need a remote backend; the toy model only answers species and counts".into()));
    }
    let ds_dir = run.require(DATASET_DIR, "build-dataset")?;
    let ds = dataset::load(&ds_dir)?;
    let (backend, label) = make_backend(run, kind)?;
    let requests: Vec<InferenceRequest> = ds
        .splits
        .test
        .iter()
        .map(|r| InferenceRequest {
            request_id: r.image_id.clone(),
            image: ImageSource::Path(ds_dir.join(dataset::rgb_path(r))),
            prompt: render_prompt(PromptMode::Habitat).to_string(),
            max_new_tokens: 256,
        })
        .collect();
    let out = batch_infer(&requests, backend.as_ref(), run.config.eval.parallelism);
    let failed = out.iter().filter(|(_, r)| r.is_err()).count();
    if failed * 2 > out.len() {
        return Err(Error::AbortedRun { failed, total: out.len() });
    }
    let records: Vec<HabitatRecord> = out
        .into_iter()
        .map(|(id, r)| match r {
            Ok(text) => match parse_habitat(&text) {
                Ok(rep) => HabitatRecord { image_id: id, raw_text: Some(text), report: Some(rep), error: None },
                Err(e) => HabitatRecord { image_id: id, raw_text: Some(text), report: None, error: Some(e.to_string()) },
            },
            Err(e) => HabitatRecord { image_id: id, raw_text: None, report: None, error: Some(e.to_string()) },
        })
        .collect();
    let dir = run.new_stage(&format!("habitat-{label}"))?;
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r).expect("record serializes"));
        lines.push('\n');
    }
    fsio::write_atomic(&dir.join("reports.jsonl"), lines.as_bytes())?;
    Ok(records)
}

fn sorted_subdirs(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with(prefix) && entry.path().is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Rebuilds tables, metrics and loss-curve plots from finished stages. Only
/// `report/` is written.
pub fn report(run: &Run) -> Result<ReportTables> {
    let mut results: Vec<EvaluationResult> = Vec::new();
    for dir in sorted_subdirs(&run.dir, "eval-")? {
        let text = fsio::read_to_string(&dir.join(RESULTS_FILE))?;
        let mut r: Vec<EvaluationResult> = serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: dir.join(RESULTS_FILE),
            locus: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        results.append(&mut r);
    }
    if results.is_empty() {
        return Err(Error::Config(format!("no evaluation results under {}; run `eval` first", run.dir.display())));
    }
    let out = run.path(REPORT_DIR);
    fsio::create_dir_all(&out)?;
    for dir in sorted_subdirs(&run.dir, "align-")? {
        let read = |name: &str, kind| -> Result<LossCurve> {
            let p = dir.join("curves").join(name);
            LossCurve::from_csv(kind, &fsio::read_to_string(&p)?)
                .map_err(|m| Error::Schema { path: p.clone(), locus: "csv".into(), message: m })
        };
        let train_c = read("train.csv", CurveKind::Train)?;
        let val_c = read("val.csv", CurveKind::Val)?;
        let name = dir.file_name().expect("dir has a name").to_string_lossy().into_owned();
        let svg = loss_svg(&train_c, &val_c, run.config.align.smoothing);
        fsio::write_atomic(&out.join(format!("loss_curve_{name}.svg")), svg.as_bytes())?;
    }
    evalkit::write_report(&out, &results)
}

/// Every stage in order on a fresh run directory.
pub fn run_all(config: PipelineConfig, log: &mut dyn FnMut(&str)) -> Result<Run> {
    let run = Run::create(config)?;
    log(&format!("run: {}", run.dir.display()));
    let corpus = gen_data(&run)?;
    log(&format!("gen-data: {} scenes", corpus.len()));
    let ds = build_dataset(&run)?;
    log(&format!("build-dataset: train {} / val {} / test {}", ds.train.len(), ds.val.len(), ds.test.len()));
    let pre = pretrain(&run, &mut |_, _| {})?;
    log(&format!(
        "pretrain: {} steps, loss {:.4} -> {:.4}, held-out exact {:.3}",
        pre.steps, pre.initial_loss_per_token, pre.final_smoothed_loss, pre.held_out.exact
    ));
    let art = align(&run)?;
    log(&format!("align: selected step {} (val loss {:.4})", art.selected_step, art.selected_val_loss()));
    let modes = run.config.eval.modes.clone();
    let results = eval(&run, run.config.eval.backend, &modes)?;
    for r in &results {
        log(&format!("eval {}: macro-F1 {:.3}, macro within-1 {:.3}", r.mode.short(), r.macro_f1(), r.macro_within1()));
    }
    report(&run)?;
    log(&format!("report: {}", run.path(REPORT_DIR).display()));
    Ok(run)
}
