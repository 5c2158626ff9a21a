//! Pipeline stages over a run directory. Every stage reads its inputs from
//! earlier stages' outputs and writes deterministic artifacts that carry the
//! seed and config hash.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::augment;
use crate::cam::{self, CamMethod};
use crate::config::{CamSubset, RunConfig};
use crate::error::{Error, Result};
use crate::imaging::{self, contact_sheet, load_mask, save_image, Image};
use crate::manifest::{write_file, Manifest, ManifestHeader};
use crate::model::{count_params, Session, LAST_CONV_TAP};
use crate::rng::{derive_seed, stream, tag};
use crate::synth;
use crate::train::{self, history_jsonl, split_train_test, stratified_kfold, EpochRecord, Item, MetricsReport};

pub const CONFIG_FILE: &str = "config.toml";

/// An immutable run directory bound to one configuration.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
    pub cfg: RunConfig,
    pub hash: String,
}

impl RunDir {
    /// Opens `root`, snapshotting the config on first use. A directory created
    /// under a different config is refused.
    pub fn open(root: &Path, cfg: RunConfig) -> Result<Self> {
        let hash = cfg.hash();
        let snap = root.join(CONFIG_FILE);
        if snap.exists() {
            let prev = RunConfig::load(&snap, None)?;
            if prev.hash() != hash {
                return Err(Error::Config(format!(
                    "{} was created with config {} but this run uses {}; pick another run directory",
                    root.display(),
                    prev.hash(),
                    hash
                )));
            }
        } else {
            let mut c = cfg.clone();
            c.run.run_dir = None;
            write_file(&snap, c.to_toml().as_bytes())?;
        }
        Ok(RunDir {
            root: root.to_path_buf(),
            cfg,
            hash,
        })
    }

    pub fn seed(&self) -> u64 {
        self.cfg.run.seed
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn tiles_dir(&self) -> PathBuf {
        self.root.join("preprocess")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn crossval_dir(&self) -> PathBuf {
        self.root.join("crossval")
    }

    pub fn cam_dir(&self, method: CamMethod) -> PathBuf {
        self.root.join("cam").join(method.name())
    }

    fn summary(&self, command: &str, mut fields: Value) -> Value {
        let obj = fields.as_object_mut().expect("summary fields form an object");
        obj.insert("command".into(), json!(command));
        obj.insert("status".into(), json!("ok"));
        obj.insert("seed".into(), json!(self.seed()));
        obj.insert("config_hash".into(), json!(self.hash));
        fields
    }

    fn header(&self, kind: &str, stage: &str) -> ManifestHeader {
        ManifestHeader {
            kind: kind.into(),
            stage: stage.into(),
            seed: self.seed(),
            config_hash: self.hash.clone(),
        }
    }

    fn read_stage_manifest(&self, dir: &Path, producer: &str) -> Result<Manifest> {
        let path = dir.join("manifest.jsonl");
        if !path.exists() {
            return Err(Error::Data(format!("{} not found; run `{producer}` first", path.display())));
        }
        Manifest::read(&path)
    }

    fn write_json(&self, path: &Path, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
        text.push('\n');
        write_file(path, text.as_bytes())
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, path: &Path, producer: &str) -> Result<T> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Data(format!("{} not found; run `{producer}` first", path.display())),
            _ => Error::io(path, e),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Generates the synthetic dataset.
pub fn synth(rd: &RunDir, jobs: usize) -> Result<Value> {
    let c = &rd.cfg;
    let m = synth::generate_dataset(
        c.dataset.count,
        c.dataset.damaged_frac,
        &c.synth,
        rd.seed(),
        &rd.hash,
        &rd.synth_dir(),
        jobs,
    )?;
    let damaged = m.records.iter().filter(|r| r.label == 1).count();
    Ok(rd.summary(
        "synth",
        json!({ "images": m.records.len(), "damaged": damaged, "manifest": rd.synth_dir().join("manifest.jsonl") }),
    ))
}

/// Crops around each pillar and splits into quadrant tiles.
pub fn preprocess(rd: &RunDir, jobs: usize) -> Result<Value> {
    let src = rd.read_stage_manifest(&rd.synth_dir(), "synth")?;
    let m = imaging::preprocess(&src, &rd.cfg.imaging, rd.seed(), &rd.hash, &rd.tiles_dir(), jobs)?;
    let tiles = m.active().count();
    let flagged = m.records.iter().filter(|r| r.flag.is_some()).count();
    Ok(rd.summary(
        "preprocess",
        json!({ "tiles": tiles, "flagged": flagged, "manifest": rd.tiles_dir().join("manifest.jsonl") }),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub config_hash: String,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

fn load_tiles(rd: &RunDir) -> Result<Vec<Item>> {
    let m = rd.read_stage_manifest(&rd.tiles_dir(), "preprocess")?;
    train::load_items(&m)
}

fn pick<'a>(items: &'a [Item], idx: &[usize]) -> Vec<&'a Item> {
    idx.iter().map(|&i| &items[i]).collect()
}

fn by_ids<'a>(items: &'a [Item], ids: &[String]) -> Result<Vec<&'a Item>> {
    let index: HashMap<&str, &Item> = items.iter().map(|it| (it.id.as_str(), it)).collect();
    ids.iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Data(format!("sample {id} from the split is missing from the tile manifest")))
        })
        .collect()
}

/// Held-out test indices and the remaining training indices.
fn test_split(rd: &RunDir, items: &[Item]) -> Result<(Vec<usize>, Vec<usize>)> {
    split_train_test(items, rd.cfg.split.test_frac, rd.seed())
}

fn new_session(rd: &RunDir, stream_coord: u64) -> Result<Session<f32>> {
    let graph = rd.cfg.model.build(rd.cfg.imaging.tile_size)?;
    Ok(Session::new(graph, derive_seed(rd.seed(), &[tag::INIT, stream_coord])))
}

fn run_training(
    rd: &RunDir,
    fit: &[&Item],
    val: &[&Item],
    init_coord: u64,
    seed: u64,
    out_dir: &Path,
    stage: &str,
) -> Result<(Session<f32>, train::TrainOutcome)> {
    let mut session = new_session(rd, init_coord)?;
    let hist_path = out_dir.join("history.jsonl");
    let header = rd.header("vig-history", stage);
    let mut so_far: Vec<EpochRecord> = Vec::new();
    let result = train::train_model(&mut session, fit, val, &rd.cfg.train, &rd.cfg.augment, seed, |r| {
        so_far.push(r.clone());
        if let Ok(text) = history_jsonl(&header, &so_far) {
            let _ = write_file(&hist_path, text.as_bytes());
        }
    });
    match result {
        Ok(outcome) => {
            write_file(&hist_path, history_jsonl(&header, &outcome.history)?.as_bytes())?;
            session.save(&out_dir.join("weights.vigw"))?;
            Ok((session, outcome))
        }
        Err(e) => {
            // Best weights up to the failure are kept for inspection.
            let _ = session.save(&out_dir.join("weights.partial.vigw"));
            Err(e)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutcomeFile {
    pub seed: u64,
    pub config_hash: String,
    pub arch: String,
    pub params: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Single 90/10 training run with a validation share of the training parents.
pub fn train_cmd(rd: &RunDir) -> Result<Value> {
    let items = load_tiles(rd)?;
    let (train_idx, test_idx) = test_split(rd, &items)?;
    let train_items = pick(&items, &train_idx);
    let (fit_idx, val_idx) = split_train_test(&train_items, rd.cfg.split.val_frac, derive_seed(rd.seed(), &[tag::SPLIT]))?;
    let fit: Vec<&Item> = fit_idx.iter().map(|&i| train_items[i]).collect();
    let val: Vec<&Item> = val_idx.iter().map(|&i| train_items[i]).collect();
    let test = pick(&items, &test_idx);
    let ids = |v: &[&Item]| v.iter().map(|it| it.id.clone()).collect::<Vec<_>>();
    let dir = rd.train_dir();
    rd.write_json(
        &dir.join("split.json"),
        &SplitFile {
            seed: rd.seed(),
            config_hash: rd.hash.clone(),
            train: ids(&fit),
            val: ids(&val),
            test: ids(&test),
        },
    )?;
    log::info!("train: {} fit, {} validation, {} test tiles", fit.len(), val.len(), test.len());
    let (session, outcome) = run_training(rd, &fit, &val, 0, rd.seed(), &dir, "train")?;
    let out = OutcomeFile {
        seed: rd.seed(),
        config_hash: rd.hash.clone(),
        arch: session.graph().arch.clone(),
        params: count_params(session.graph()),
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        epochs_run: outcome.epochs_run,
        stopped_early: outcome.stopped_early,
    };
    rd.write_json(&dir.join("outcome.json"), &out)?;
    Ok(rd.summary(
        "train",
        json!({
            "fit": fit.len(), "val": val.len(), "test": test.len(),
            "best_epoch": out.best_epoch, "epochs_run": out.epochs_run, "best_val_loss": out.best_val_loss,
            "weights": dir.join("weights.vigw"),
        }),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub label: u8,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub seed: u64,
    pub config_hash: String,
    pub stage: String,
    pub report: MetricsReport,
    pub scores: Vec<ScoreRow>,
}

fn evaluate_on(rd: &RunDir, session: &mut Session<f32>, test: &[&Item], stage: &str) -> Result<MetricsFile> {
    let (report, scores) = train::evaluate_model(session, test, &rd.cfg.eval, rd.cfg.train.eval_batch_size)?;
    Ok(MetricsFile {
        seed: rd.seed(),
        config_hash: rd.hash.clone(),
        stage: stage.into(),
        report,
        scores: test
            .iter()
            .zip(scores)
            .map(|(it, score)| ScoreRow {
                id: it.id.clone(),
                label: it.label,
                score,
            })
            .collect(),
    })
}

fn load_trained(rd: &RunDir) -> Result<Session<f32>> {
    let path = rd.train_dir().join("weights.vigw");
    if !path.exists() {
        return Err(Error::Data(format!("{} not found; run `train` first", path.display())));
    }
    let mut s = new_session(rd, 0)?;
    s.load(&path)?;
    Ok(s)
}

fn report_fields(r: &MetricsReport) -> Value {
    json!({
        "n": r.n, "auc": r.auc, "accuracy": r.accuracy, "fn_at_95": r.fn_at_95, "fp_at_10": r.fp_at_10,
        "precision_at_full_recall": r.precision_at_full_recall, "mean_bce": r.mean_bce,
    })
}

/// Scores the trained model on the held-out test tiles.
pub fn evaluate_cmd(rd: &RunDir) -> Result<Value> {
    let split: SplitFile = rd.read_json(&rd.train_dir().join("split.json"), "train")?;
    let items = load_tiles(rd)?;
    let test = by_ids(&items, &split.test)?;
    let mut session = load_trained(rd)?;
    let metrics = evaluate_on(rd, &mut session, &test, "evaluate")?;
    let path = rd.train_dir().join("metrics.json");
    rd.write_json(&path, &metrics)?;
    let mut v = report_fields(&metrics.report);
    v["report"] = json!(path);
    Ok(rd.summary("evaluate", v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub auc: Option<f64>,
    pub fn_at_95: usize,
    pub fp_at_10: usize,
    pub precision_at_full_recall: Option<f64>,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_epochs: f64,
    pub min_auc: Option<f64>,
    pub fn_at_95_mean: f64,
    pub fn_at_95_max: usize,
    pub fp_at_10_mean: f64,
    pub fp_at_10_max: usize,
    pub mean_precision_at_full_recall: Option<f64>,
    pub min_accuracy: f64,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub seed: u64,
    pub config_hash: String,
    pub folds: Vec<FoldRow>,
    pub aggregate: Aggregate,
}

pub fn aggregate(rows: &[FoldRow]) -> Aggregate {
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&FoldRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let all_some = |f: &dyn Fn(&FoldRow) -> Option<f64>| rows.iter().map(f).collect::<Option<Vec<f64>>>();
    Aggregate {
        mean_epochs: mean(&|r| r.epochs as f64),
        min_auc: all_some(&|r| r.auc).map(|v| v.into_iter().fold(f64::INFINITY, f64::min)),
        fn_at_95_mean: mean(&|r| r.fn_at_95 as f64),
        fn_at_95_max: rows.iter().map(|r| r.fn_at_95).max().unwrap_or(0),
        fp_at_10_mean: mean(&|r| r.fp_at_10 as f64),
        fp_at_10_max: rows.iter().map(|r| r.fp_at_10).max().unwrap_or(0),
        mean_precision_at_full_recall: all_some(&|r| r.precision_at_full_recall).map(|v| v.iter().sum::<f64>() / n),
        min_accuracy: rows.iter().map(|r| r.accuracy).fold(f64::INFINITY, f64::min),
        mean_loss: mean(&|r| r.loss),
    }
}

/// Table-style rendering of a cross-validation report.
pub fn crossval_table(r: &CrossvalReport) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut s = format!(
        "{:<6} {:>6} {:>8} {:>6} {:>6} {:>10} {:>8} {:>8}\n",
        "fold", "epochs", "auc", "fn95", "fp10", "prec@r1", "acc", "loss"
    );
    for f in &r.folds {
        s.push_str(&format!(
            "{:<6} {:>6} {:>8} {:>6} {:>6} {:>10} {:>8.4} {:>8.4}\n",
            f.fold,
            f.epochs,
            opt(f.auc),
            f.fn_at_95,
            f.fp_at_10,
            opt(f.precision_at_full_recall),
            f.accuracy,
            f.loss
        ));
    }
    let a = &r.aggregate;
    s.push_str(&format!(
        "mean epochs {:.1} | min auc {} | fn95 mean {:.1} max {} | fp10 mean {:.1} max {} | mean prec@r1 {} | min acc {:.4} | mean loss {:.4}\n",
        a.mean_epochs,
        opt(a.min_auc),
        a.fn_at_95_mean,
        a.fn_at_95_max,
        a.fp_at_10_mean,
        a.fp_at_10_max,
        opt(a.mean_precision_at_full_recall),
        a.min_accuracy,
        a.mean_loss
    ));
    s
}

/// Stratified k-fold training on the non-test parents; every fold model is
/// scored on the shared test split. Finished folds are reused.
pub fn crossval_cmd(rd: &RunDir, jobs: usize) -> Result<Value> {
    let items = load_tiles(rd)?;
    let (train_idx, test_idx) = test_split(rd, &items)?;
    let train_items = pick(&items, &train_idx);
    let test = pick(&items, &test_idx);
    let k = rd.cfg.split.folds;
    let plan = stratified_kfold(&train_items, k, derive_seed(rd.seed(), &[tag::FOLDS]))?;
    let dir = rd.crossval_dir();
    rd.write_json(&dir.join("folds.json"), &plan)?;
    let run_fold = |f: usize| -> Result<FoldRow> {
        let fdir = dir.join(format!("fold{}", f + 1));
        let mpath = fdir.join("metrics.json");
        let opath = fdir.join("outcome.json");
        let (metrics, outcome) = match (rd.read_json::<MetricsFile>(&mpath, "crossval"), rd.read_json::<OutcomeFile>(&opath, "crossval")) {
            (Ok(m), Ok(o)) if m.config_hash == rd.hash && o.config_hash == rd.hash => {
                log::info!("crossval: fold {} already complete", f + 1);
                (m, o)
            }
            _ => {
                let (fit_idx, val_idx) = plan.partition(&train_items, f);
                let fit: Vec<&Item> = fit_idx.iter().map(|&i| train_items[i]).collect();
                let val: Vec<&Item> = val_idx.iter().map(|&i| train_items[i]).collect();
                let seed = derive_seed(rd.seed(), &[tag::FOLDS, f as u64 + 1]);
                let (mut session, outcome) = run_training(rd, &fit, &val, f as u64 + 1, seed, &fdir, "crossval")?;
                let m = evaluate_on(rd, &mut session, &test, "crossval")?;
                let o = OutcomeFile {
                    seed: rd.seed(),
                    config_hash: rd.hash.clone(),
                    arch: session.graph().arch.clone(),
                    params: count_params(session.graph()),
                    best_epoch: outcome.best_epoch,
                    best_val_loss: outcome.best_val_loss,
                    epochs_run: outcome.epochs_run,
                    stopped_early: outcome.stopped_early,
                };
                rd.write_json(&opath, &o)?;
                rd.write_json(&mpath, &m)?;
                (m, o)
            }
        };
        let r = &metrics.report;
        Ok(FoldRow {
            fold: f + 1,
            epochs: outcome.epochs_run,
            best_epoch: outcome.best_epoch,
            auc: r.auc,
            fn_at_95: r.fn_at_95,
            fp_at_10: r.fp_at_10,
            precision_at_full_recall: r.precision_at_full_recall,
            accuracy: r.accuracy,
            loss: r.mean_bce,
        })
    };
    let rows = crate::par::map_indexed(k, jobs, run_fold).into_iter().collect::<Result<Vec<_>>>()?;
    let report = CrossvalReport {
        seed: rd.seed(),
        config_hash: rd.hash.clone(),
        aggregate: aggregate(&rows),
        folds: rows,
    };
    rd.write_json(&dir.join("report.json"), &report)?;
    write_file(&dir.join("report.txt"), crossval_table(&report).as_bytes())?;
    Ok(rd.summary(
        "crossval",
        json!({ "folds": k, "aggregate": report.aggregate, "report": dir.join("report.json") }),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamRow {
    pub id: String,
    pub label: u8,
    /// Heatmap share inside the dilated crack mask; damaged tiles with a non-empty mask only.
    pub energy: Option<f64>,
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamReport {
    pub seed: u64,
    pub config_hash: String,
    pub method: CamMethod,
    pub dilation: usize,
    pub rows: Vec<CamRow>,
    pub mean_energy: Option<f64>,
    /// Share of scored tiles with at least 70% of the heatmap inside the mask.
    pub share_energy_at_least_70: Option<f64>,
    pub mean_magnitude_damaged: Option<f64>,
    pub mean_magnitude_undamaged: Option<f64>,
}

#[derive(Serialize)]
struct NativeMap<'a> {
    id: &'a str,
    height: usize,
    width: usize,
    values: &'a [f64],
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn summarize_cam(rows: &[CamRow]) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    let energies: Vec<f64> = rows.iter().filter_map(|r| r.energy).collect();
    let mean_energy = mean(energies.iter().copied());
    let share = (!energies.is_empty())
        .then(|| energies.iter().filter(|&&e| e >= 0.7).count() as f64 / energies.len() as f64);
    let mag = |label: u8| mean(rows.iter().filter(|r| r.label == label).map(|r| r.magnitude));
    (mean_energy, share, mag(1), mag(0))
}

/// Heatmaps, overlays and localization scores for the configured subset.
pub fn cam_cmd(rd: &RunDir, method: CamMethod) -> Result<Value> {
    let mut session = load_trained(rd)?;
    let tiles = rd.read_stage_manifest(&rd.tiles_dir(), "preprocess")?;
    let records: Vec<&crate::manifest::Record> = match rd.cfg.cam.subset {
        CamSubset::All => tiles.active().collect(),
        CamSubset::Test => {
            let split: SplitFile = rd.read_json(&rd.train_dir().join("split.json"), "train")?;
            split
                .test
                .iter()
                .map(|id| tiles.find(id).ok_or_else(|| Error::Data(format!("tile {id} missing from manifest"))))
                .collect::<Result<_>>()?
        }
    };
    let dir = rd.cam_dir(method);
    let c = &rd.cfg.cam;
    let mut rows = Vec::with_capacity(records.len());
    let mut natives = String::new();
    let mut overlays = Vec::with_capacity(records.len());
    for rec in records {
        let image = imaging::load_image(&tiles.resolve(&rec.path))?;
        let h = match method {
            CamMethod::ScoreCam => cam::score_cam(&mut session, &image, &rec.id, c.score_batch)?,
            m => cam::compute(&mut session, m, &image, &rec.id)?,
        };
        let overlay = cam::render_overlay(&h, &image, c.alpha)?;
        save_image(&overlay, &dir.join("overlays").join(format!("{}.png", rec.id)))?;
        overlays.push(overlay);
        let energy = match (&rec.mask_path, rec.label) {
            (Some(p), 1) => {
                let mask = load_mask(&tiles.resolve(p))?;
                if mask.is_empty() {
                    None
                } else {
                    Some(cam::localization_energy(&h, &mask, c.dilation)?)
                }
            }
            _ => None,
        };
        natives.push_str(
            &serde_json::to_string(&NativeMap {
                id: &rec.id,
                height: h.native_size.0,
                width: h.native_size.1,
                values: &h.native,
            })
            .map_err(|e| Error::Data(e.to_string()))?,
        );
        natives.push('\n');
        rows.push(CamRow {
            id: rec.id.clone(),
            label: rec.label,
            energy,
            magnitude: h.magnitude(),
        });
    }
    write_file(&dir.join("heatmaps.jsonl"), natives.as_bytes())?;
    if !overlays.is_empty() {
        save_image(&contact_sheet(&overlays, c.sheet_columns, 2)?, &dir.join("sheet.png"))?;
    }
    let (mean_energy, share, mag1, mag0) = summarize_cam(&rows);
    let report = CamReport {
        seed: rd.seed(),
        config_hash: rd.hash.clone(),
        method,
        dilation: c.dilation,
        mean_energy,
        share_energy_at_least_70: share,
        mean_magnitude_damaged: mag1,
        mean_magnitude_undamaged: mag0,
        rows,
    };
    rd.write_json(&dir.join("report.json"), &report)?;
    Ok(rd.summary(
        "cam",
        json!({
            "method": method.name(), "tiles": report.rows.len(), "mean_energy": mean_energy,
            "share_energy_at_least_70": share, "mean_magnitude_damaged": mag1, "mean_magnitude_undamaged": mag0,
            "report": dir.join("report.json"),
        }),
    ))
}

/// Times Grad-CAM and Score-CAM on the first test tiles.
pub fn benchmark_cam_cmd(rd: &RunDir) -> Result<Value> {
    let mut session = load_trained(rd)?;
    let split: SplitFile = rd.read_json(&rd.train_dir().join("split.json"), "train")?;
    let items = load_tiles(rd)?;
    let n = rd.cfg.cam.benchmark_samples.min(split.test.len());
    let test = by_ids(&items, &split.test[..n])?;
    let images: Vec<(&str, &Image)> = test.iter().map(|it| (it.id.as_str(), &it.image)).collect();
    let rows = cam::benchmark(&mut session, &images, &[CamMethod::GradCam, CamMethod::ScoreCam])?;
    let mut text = String::new();
    for r in &rows {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?);
        text.push('\n');
    }
    let path = rd.root.join("cam").join("benchmark.jsonl");
    write_file(&path, text.as_bytes())?;
    let avg = |m: CamMethod| mean(rows.iter().filter(|r| r.method == m).map(|r| r.seconds));
    let (g, s) = (avg(CamMethod::GradCam), avg(CamMethod::ScoreCam));
    let channels = session
        .graph()
        .tap_layer(LAST_CONV_TAP)
        .map(|l| l.out_shape[0])
        .unwrap_or(0);
    Ok(rd.summary(
        "benchmark-cam",
        json!({
            "samples": n, "tap_channels": channels, "grad_cam_seconds": g, "score_cam_seconds": s,
            "ratio": g.zip(s).map(|(g, s)| s / g), "report": path,
        }),
    ))
}

/// Contact sheet: each row is one tile followed by augmented variants.
pub fn augment_preview_cmd(rd: &RunDir) -> Result<Value> {
    let (dir, producer) = if rd.tiles_dir().join("manifest.jsonl").exists() {
        (rd.tiles_dir(), "preprocess")
    } else {
        (rd.synth_dir(), "synth")
    };
    let m = rd.read_stage_manifest(&dir, producer)?;
    let p = &rd.cfg.preview;
    let mut cells = Vec::new();
    for (i, rec) in m.active().take(p.samples).enumerate() {
        let image = imaging::load_image(&m.resolve(&rec.path))?;
        for j in 0..p.variants {
            let mut rng = stream(rd.seed(), &[tag::PREVIEW, i as u64, j as u64]);
            cells.push(augment::augment(&image, rec.label, &rd.cfg.augment, &mut rng).0);
        }
        cells.insert(cells.len() - p.variants, image);
    }
    if cells.is_empty() {
        return Err(Error::Data("no images to preview".into()));
    }
    let path = rd.root.join("augment-preview.png");
    save_image(&contact_sheet(&cells, p.variants + 1, 4)?, &path)?;
    Ok(rd.summary("augment-preview", json!({ "images": cells.len(), "sheet": path })))
}

/// Layer table of the configured model and its summary fields.
pub fn describe_model(cfg: &RunConfig) -> Result<(String, Value)> {
    let g = cfg.model.build(cfg.imaging.tile_size)?;
    let tap = g.tap_layer(LAST_CONV_TAP).map(|l| l.out_shape.clone());
    let v = json!({
        "command": "describe-model",
        "status": "ok",
        "arch": g.arch,
        "input_size": g.input_size,
        "conv_layers": g.conv_count(),
        "maxpool_layers": g.maxpool_count(),
        "concat_skips": g.count(|k| matches!(k, crate::model::LayerKind::ConcatSkip)),
        "head": g.head_kinds(),
        "gap_dense_head": g.has_gap_dense_head(),
        "last_conv": tap,
        "params": count_params(&g),
        "config_hash": cfg.hash(),
    });
    Ok((g.describe(), v))
}
