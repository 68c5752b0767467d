//! The five subcommands. They chain through files under `out_dir`:
//! gen-synthetic writes `data/` + its manifest, poison writes `poisoned/`,
//! train writes `model.ckpt` + `loss_log.csv`, eval writes `report.json` and
//! appends `results.csv`, export-features writes `features.csv`. Every
//! command also drops the effective config next to its outputs, and every
//! byte is a pure function of that config, so reruns reproduce files exactly.

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::steps::parse_pipeline;
use pointblank::dataset::{
    apply_trigger, generate_synthetic_corpus, load_manifest_dataset, load_xyz, poison_dataset,
    save_xyz, write_manifest, LabeledDataset, ManifestRow, PoisonPlan, Sample, Split,
};
use pointblank::metrics::{
    attack_success_rate, chamfer_distance, clean_accuracy, per_class_accuracy, EvalReport,
};
use pointblank::model::{load_checkpoint, save_checkpoint, train, TrainConfig};
use pointblank::preprocess::run_pipeline;
use pointblank::rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

// stream tags: one fixed lane per stage so stages stay independent
const TAG_GEN_TRAIN: u64 = 0x11;
const TAG_GEN_TEST: u64 = 0x12;
const TAG_POISON: u64 = 0x21;
const TAG_TRAIN: u64 = 0x31;
const TAG_EVAL: u64 = 0x41;

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(&cfg.out_dir)
}

fn data_manifest(out: &Path) -> PathBuf {
    out.join("data").join("manifest.csv")
}

fn poison_manifest(out: &Path) -> PathBuf {
    out.join("poisoned").join("manifest.csv")
}

fn runtime(msg: String) -> CliError {
    CliError::Runtime(anyhow::anyhow!(msg))
}

/// Every command records the config it actually ran with.
fn write_effective_config(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    fs::create_dir_all(out)?;
    let text = toml::to_string(cfg).expect("config always serializes");
    fs::write(out.join("config.toml"), text)?;
    Ok(())
}

/// Clean train/test splits, either freshly loadable synthetic output or a
/// user manifest. Labels in generated manifests are the numeric class ids,
/// which survive the loader's sorted-name mapping unchanged.
fn load_input(cfg: &ExperimentConfig, out: &Path) -> CliResult<(LabeledDataset, LabeledDataset)> {
    let (manifest, base) = if cfg.dataset.source == "synthetic" {
        let m = data_manifest(out);
        if !m.exists() {
            return Err(runtime(format!(
                "{} not found; run `gen-synthetic` first",
                m.display()
            )));
        }
        (m, out.to_path_buf())
    } else {
        let m = PathBuf::from(&cfg.dataset.source);
        let base = m.parent().unwrap_or(Path::new(".")).to_path_buf();
        (m, base)
    };
    Ok(load_manifest_dataset(&manifest, &base, cfg.dataset.points, cfg.seed)?)
}

pub fn cmd_gen_synthetic(cfg: &ExperimentConfig) -> CliResult<()> {
    if cfg.dataset.source != "synthetic" {
        return Err(CliError::config(
            "gen-synthetic needs dataset.source = \"synthetic\"; external data is ingested per manifest",
        ));
    }
    let out = out_dir(cfg);
    write_effective_config(cfg, &out)?;
    let d = &cfg.dataset;
    let splits = [
        ("train", d.train_per_class, TAG_GEN_TRAIN, Split::Train),
        ("test", d.test_per_class, TAG_GEN_TEST, Split::Test),
    ];
    let mut rows = Vec::new();
    for (name, per_class, tag, split) in splits {
        let ds = generate_synthetic_corpus(
            per_class,
            d.points,
            d.noise_sigma,
            &mut rng::derive(cfg.seed, &[tag]),
            split,
        )?;
        let dir = out.join("data").join(name);
        fs::create_dir_all(&dir)?;
        for (i, s) in ds.samples.iter().enumerate() {
            let file = format!("{i:03}_{}.xyz", ds.class_names[s.label]);
            save_xyz(&dir.join(&file), &s.cloud)?;
            rows.push(ManifestRow {
                path: format!("data/{name}/{file}"),
                label: s.label.to_string(),
                split: name.to_string(),
            });
        }
    }
    write_manifest(&data_manifest(&out), &rows)?;
    println!("wrote {} clouds and {}", rows.len(), data_manifest(&out).display());
    Ok(())
}

/// One poisoned-training-set row: everything train/export need to reload it.
#[derive(Serialize, Deserialize)]
struct PoisonRow {
    path: String,
    label: usize,
    split: String,
    poisoned: u8,
    cd_x100: Option<f64>,
}

pub fn cmd_poison(cfg: &ExperimentConfig) -> CliResult<()> {
    let out = out_dir(cfg);
    write_effective_config(cfg, &out)?;
    let (train_ds, _) = load_input(cfg, &out)?;
    if cfg.poison.target >= train_ds.n_classes() {
        return Err(CliError::config(format!(
            "poison.target {} out of range for {} classes",
            cfg.poison.target,
            train_ds.n_classes()
        )));
    }
    let poisoned = if cfg.poison.rate == 0.0 {
        train_ds.clone()
    } else {
        let plan = PoisonPlan {
            rate: cfg.poison.rate,
            target: cfg.poison.target,
            trigger: cfg.trigger_spec()?,
            seed: rng::derive_seed(cfg.seed, &[TAG_POISON]),
        };
        poison_dataset(&train_ds, &plan)?
    };
    let dir = out.join("poisoned").join("train");
    fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_path(poison_manifest(&out))
        .map_err(|e| runtime(format!("cannot write poison manifest: {e}")))?;
    let mut n_poisoned = 0usize;
    for (i, s) in poisoned.samples.iter().enumerate() {
        let file = format!("{i:03}.xyz");
        save_xyz(&dir.join(&file), &s.cloud)?;
        let flagged = poisoned.poison_mask[i];
        let cd = if flagged {
            n_poisoned += 1;
            Some(100.0 * chamfer_distance(&train_ds.samples[i].cloud, &s.cloud)?)
        } else {
            None
        };
        w.serialize(PoisonRow {
            path: format!("poisoned/train/{file}"),
            label: s.label,
            split: "train".into(),
            poisoned: flagged as u8,
            cd_x100: cd,
        })
        .map_err(|e| runtime(format!("cannot write poison manifest: {e}")))?;
    }
    w.flush()?;
    println!(
        "poisoned {n_poisoned} of {} training samples ({} trigger)",
        poisoned.len(),
        cfg.poison.trigger
    );
    Ok(())
}

fn read_poison_rows(out: &Path) -> CliResult<Vec<PoisonRow>> {
    let path = poison_manifest(out);
    if !path.exists() {
        return Err(runtime(format!("{} not found; run `poison` first", path.display())));
    }
    let mut r = csv::Reader::from_path(&path)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let rows: Result<Vec<PoisonRow>, _> = r.deserialize().collect();
    rows.map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Reload the poisoned training set exactly as written — no re-normalization,
/// the files already hold the geometry training must see.
fn load_poisoned(out: &Path) -> CliResult<LabeledDataset> {
    let rows = read_poison_rows(out)?;
    let mut samples = Vec::with_capacity(rows.len());
    let mut mask = Vec::with_capacity(rows.len());
    let mut n_classes = 0usize;
    for row in &rows {
        samples.push(Sample { cloud: load_xyz(&out.join(&row.path))?, label: row.label });
        mask.push(row.poisoned == 1);
        n_classes = n_classes.max(row.label + 1);
    }
    let names = (0..n_classes).map(|c| c.to_string()).collect();
    let mut ds = LabeledDataset::new(samples, names, Split::Train)?;
    ds.poison_mask = mask;
    Ok(ds)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> CliResult<()> {
    let out = out_dir(cfg);
    write_effective_config(cfg, &out)?;
    let ds = load_poisoned(&out)?;
    let tc = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        lr: cfg.train.lr,
        seed: cfg.seed,
        pipeline: parse_pipeline(&cfg.train.pipeline)?,
    };
    let (model, stats) = train(&ds, &tc, &mut rng::derive(cfg.seed, &[TAG_TRAIN]))?;
    save_checkpoint(&out.join("model.ckpt"), &model)?;
    let mut log = String::from("epoch,loss,train_acc\n");
    for s in &stats {
        log.push_str(&format!("{},{},{}\n", s.epoch, s.loss, s.train_acc));
    }
    fs::write(out.join("loss_log.csv"), log)?;
    let last = stats.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} samples: loss {:.4}, train_acc {:.3}",
        stats.len(),
        ds.len(),
        last.loss,
        last.train_acc
    );
    Ok(())
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> CliResult<()> {
    let out = out_dir(cfg);
    write_effective_config(cfg, &out)?;
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| out.join("model.ckpt"));
    if !ckpt.exists() {
        return Err(runtime(format!("{} not found; run `train` first", ckpt.display())));
    }
    let model = load_checkpoint(&ckpt)?;
    let (_, test) = load_input(cfg, &out)?;
    if model.n_classes() != test.n_classes() {
        return Err(runtime(format!(
            "checkpoint has {} classes but the test set has {}",
            model.n_classes(),
            test.n_classes()
        )));
    }
    let pipe = parse_pipeline(&cfg.eval.pipeline)?;
    let eval_seed = rng::derive_seed(cfg.seed, &[TAG_EVAL]);
    // accuracy is measured through the same inference pipeline the deployment
    // would run, identity by default
    let acc_ds = if pipe.is_identity() {
        test.clone()
    } else {
        let mut processed = test.clone();
        for (i, s) in processed.samples.iter_mut().enumerate() {
            let mut stream = rng::derive(eval_seed, &[0xacc, i as u64]);
            s.cloud = run_pipeline(&s.cloud, &pipe, &mut stream)?;
        }
        processed
    };
    let acc = clean_accuracy(&model, &acc_ds)?;
    let per_class_acc = per_class_accuracy(&model, &acc_ds)?;
    let trigger = cfg.trigger_spec()?;
    let asr = attack_success_rate(&model, &test, &trigger, cfg.poison.target, &pipe, eval_seed)?;
    let non_target: Vec<usize> =
        (0..test.len()).filter(|&i| test.samples[i].label != cfg.poison.target).collect();
    let mut cd_sum = 0.0;
    for &i in &non_target {
        let clean = &test.samples[i].cloud;
        let triggered = apply_trigger(&trigger, clean, eval_seed, i as u64)?;
        cd_sum += chamfer_distance(clean, &triggered)?;
    }
    let report = EvalReport {
        acc,
        asr,
        cd_x100: 100.0 * cd_sum / non_target.len() as f64,
        per_class_acc,
        n_samples: test.len(),
        n_non_target: non_target.len(),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| runtime(format!("report serialization failed: {e}")))?;
    fs::write(out.join("report.json"), json + "\n")?;
    append_results_row(cfg, &out, &report)?;
    println!(
        "acc={} asr={} cd_x100={} ({} test samples, {} non-target)",
        report.acc, report.asr, report.cd_x100, report.n_samples, report.n_non_target
    );
    Ok(())
}

/// Cumulative results table, one row per distinct config hash; rerunning an
/// identical config leaves the file untouched.
fn append_results_row(cfg: &ExperimentConfig, out: &Path, r: &EvalReport) -> CliResult<()> {
    let path = out.join("results.csv");
    let run_id = cfg.run_id();
    let mut body = if path.exists() {
        let existing = fs::read_to_string(&path)?;
        if existing
            .lines()
            .skip(1)
            .any(|line| line.split(',').next() == Some(run_id.as_str()))
        {
            return Ok(());
        }
        existing
    } else {
        String::from("run_id,trigger,pipeline,acc,asr,cd_x100,seed\n")
    };
    body.push_str(&format!(
        "{},{},{},{},{},{},{}\n",
        run_id,
        cfg.poison.trigger,
        cfg.pipeline_label(),
        r.acc,
        r.asr,
        r.cd_x100,
        cfg.seed
    ));
    fs::write(&path, body)?;
    Ok(())
}

pub fn cmd_export_features(cfg: &ExperimentConfig, split: &str) -> CliResult<()> {
    let out = out_dir(cfg);
    write_effective_config(cfg, &out)?;
    let model = load_checkpoint(&out.join("model.ckpt"))
        .map_err(|e| runtime(format!("cannot load checkpoint (run `train` first): {e}")))?;
    let ds = match split {
        "train" => load_poisoned(&out)?,
        "test" => load_input(cfg, &out)?.1,
        other => return Err(CliError::config(format!("split must be train or test, got `{other}`"))),
    };
    let mut buf = String::from("id,label,poisoned");
    for f in 0..256 {
        buf.push_str(&format!(",f{f}"));
    }
    buf.push('\n');
    for (i, s) in ds.samples.iter().enumerate() {
        let feats = model.features(&s.cloud)?;
        buf.push_str(&format!("{i},{},{}", s.label, ds.poison_mask[i] as u8));
        for v in feats {
            buf.push_str(&format!(",{v}"));
        }
        buf.push('\n');
    }
    fs::write(out.join("features.csv"), buf)?;
    println!("exported {} feature rows ({split} split)", ds.len());
    Ok(())
}
