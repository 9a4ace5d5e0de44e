//! One function per CLI verb. Results go to stdout as `key=value` lines;
//! progress goes to the log.

use crate::config::{Provenance, RunConfig};
use crate::CliError;
use satforge::dataset::{
    generate_dataset, load_manifest, load_patch_sets, load_test_items, Role, SplitManifest,
};
use satforge::eval::{
    detection_eval, localization_eval, render_table, reports_to_tsv, soft_masks, write_curves,
    AucReport, Evaluated, Task,
};
use satforge::image::load_image;
use satforge::models::{build_spec, load_weights, save_weights, ModelWeights};
use satforge::ocsvm::{fit, load_svm, outlier_fraction, save_svm, SvmModel};
use satforge::pipeline::{
    assemble_soft_mask, detection_score, encode_patches, extract_patches, write_outputs,
};
use satforge::seed::text_hash;
use satforge::training::{train_autoencoder, train_gan, Stage, TrainHistory};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn manifest(cfg: &RunConfig) -> Result<SplitManifest, CliError> {
    load_manifest(&cfg.paths.data).map_err(|e| {
        CliError::data(format!(
            "no dataset at {} ({e}); run gen-data first",
            cfg.paths.data.display()
        ))
    })
}

fn load_encoder(cfg: &RunConfig, stage: Stage) -> Result<ModelWeights<f32>, CliError> {
    let path = cfg.best_weights(stage);
    if !path.exists() {
        return Err(CliError::data(format!(
            "no {stage} checkpoint at {}; run train --strategy {stage}",
            path.display()
        )));
    }
    Ok(load_weights(&path)?)
}

fn load_model(cfg: &RunConfig, stage: Stage) -> Result<SvmModel, CliError> {
    let path = cfg.svm_path(stage);
    if !path.exists() {
        return Err(CliError::data(format!(
            "no {stage} SVM at {}; run fit-svm --strategy {stage}",
            path.display()
        )));
    }
    Ok(load_svm(&path)?)
}

pub fn gen_data(cfg: &RunConfig, prov: &Provenance) -> Result<(), CliError> {
    let dir = &cfg.paths.data;
    let m = generate_dataset(dir, &cfg.dataset_config())?;
    cfg.write_effective(prov, dir, "gen-data")?;
    println!("data_dir={}", dir.display());
    println!("base_images={}", cfg.dataset.images);
    println!("pool_images={}", m.with_role(Role::Pool).count());
    println!("test_pristine={}", m.with_role(Role::TestPristine).count());
    println!("test_forged={}", m.with_role(Role::TestForged).count());
    println!("train_patches={}", m.train_patches);
    println!("val_patches={}", m.val_patches);
    println!("manifest_hash={}", text_hash(&m.to_text()));
    Ok(())
}

/// Tab-separated epoch records preceded by `#` summary lines.
pub fn history_to_tsv(h: &TrainHistory) -> String {
    let mut out = format!(
        "# stage={} best_epoch={} initial_val_mse={:e} collapse_warning={}\n",
        h.stage, h.best_epoch, h.initial_val_mse, h.collapse_warning
    );
    for o in &h.optimizers {
        let _ = writeln!(
            out,
            "# optimizer role={} kind={} lr={} steps={}",
            o.role,
            o.kind.name(),
            o.learning_rate,
            o.steps
        );
    }
    out.push_str("epoch\ttrain_mse\tval_mse\tdisc_bce\tgen_adv\tdisc_accuracy\n");
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:e}"));
    for r in &h.records {
        let _ = writeln!(
            out,
            "{}\t{:e}\t{:e}\t{}\t{}\t{}",
            r.epoch,
            r.train_mse,
            r.val_mse,
            opt(r.disc_bce),
            opt(r.gen_adv),
            opt(r.disc_accuracy)
        );
    }
    out
}

pub fn train(cfg: &RunConfig, prov: &Provenance, stage: Stage) -> Result<(), CliError> {
    let m = manifest(cfg)?;
    let (train, val) = load_patch_sets(&cfg.paths.data, &m)?;
    let tc = cfg.train_config(stage)?;
    let (weights, history) = match stage {
        Stage::Plain => train_autoencoder(&train, &val, &tc)?,
        Stage::Gan => {
            let pre = load_encoder(cfg, Stage::Plain)?;
            if pre.arch() != tc.arch {
                return Err(CliError::data(format!(
                    "plain checkpoint is {}, config asks for {}",
                    pre.arch().as_str(),
                    tc.arch.as_str()
                )));
            }
            train_gan(&pre, &train, &val, &tc)?
        }
    };
    let dir = cfg.stage_dir(stage);
    save_weights(&weights, &cfg.best_weights(stage))?;
    write(&dir.join("history.tsv"), &history_to_tsv(&history))?;
    cfg.write_effective(prov, &dir, "train")?;
    println!("strategy={stage}");
    println!("arch={}", tc.arch.as_str());
    println!("epochs={}", history.records.len());
    println!("initial_val_mse={:e}", history.initial_val_mse);
    println!("best_epoch={}", history.best_epoch);
    println!("best_val_mse={:e}", history.best().val_mse);
    println!("collapse_warning={}", history.collapse_warning);
    println!("weights={}", cfg.best_weights(stage).display());
    Ok(())
}

pub fn fit_svm(cfg: &RunConfig, prov: &Provenance, stage: Stage) -> Result<(), CliError> {
    let encoder = load_encoder(cfg, stage)?;
    let expected = build_spec(cfg.arch()?).feature_dim();
    let dim = encoder.spec.feature_dim();
    if dim != expected {
        return Err(CliError::data(format!(
            "checkpoint {} emits {dim} features, config arch {} emits {expected}",
            encoder.arch().as_str(),
            cfg.train.arch
        )));
    }
    let m = manifest(cfg)?;
    let (train, _) = load_patch_sets(&cfg.paths.data, &m)?;
    let features = encode_patches(&encoder, &train)?;
    let svm = fit(&features, &cfg.svm_config()?)?;
    let decisions = svm.decision_batch(&features)?;
    let outliers = outlier_fraction(&decisions, 1e-9);
    let sv_fraction = svm.support_vectors.len() as f64 / features.len() as f64;
    if sv_fraction < svm.config.nu {
        log::warn!(
            "fit_svm event=sv_fraction_below_nu sv_fraction={sv_fraction:e} nu={:e}",
            svm.config.nu
        );
    }
    let dir = cfg.stage_dir(stage);
    save_svm(&svm, &cfg.svm_path(stage))?;
    let mut diag = String::new();
    let _ = writeln!(diag, "strategy={stage}");
    let _ = writeln!(diag, "gamma={}", svm.config.gamma);
    let _ = writeln!(diag, "nu={:e}", svm.config.nu);
    let _ = writeln!(diag, "training_points={}", features.len());
    let _ = writeln!(diag, "feature_dim={dim}");
    let _ = writeln!(diag, "support_vectors={}", svm.support_vectors.len());
    let _ = writeln!(diag, "sv_fraction={sv_fraction:e}");
    let _ = writeln!(diag, "training_outlier_fraction={outliers:e}");
    let _ = writeln!(diag, "rho={:e}", svm.rho);
    let _ = writeln!(diag, "kkt_violation={:e}", svm.kkt_violation);
    let _ = writeln!(diag, "iterations={}", svm.iterations);
    let _ = writeln!(diag, "converged={}", svm.converged);
    write(&dir.join("svm_fit.txt"), &diag)?;
    cfg.write_effective(prov, &dir, "fit-svm")?;
    print!("{diag}");
    Ok(())
}

pub fn infer(
    cfg: &RunConfig,
    prov: &Provenance,
    stage: Stage,
    image: &Path,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let encoder = load_encoder(cfg, stage)?;
    let svm = load_model(cfg, stage)?;
    let img = load_image(image)?;
    let geo = cfg.geometry()?;
    let grid = extract_patches(&img, geo.size, geo.stride)?;
    let start = Instant::now();
    let features = encode_patches(&encoder, &grid.patches)?;
    let scores = svm.decision_batch(&features)?;
    let elapsed = start.elapsed();
    let soft = assemble_soft_mask(&grid, &scores, geo.aggregation)?;
    let score = detection_score(&soft)?;
    let dir = out.unwrap_or_else(|| cfg.paths.outputs.join("infer"));
    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let files = write_outputs(&soft, cfg.eval.threshold, &dir, stem)?;
    cfg.write_effective(prov, &dir, "infer")?;
    println!("image={}", image.display());
    println!("height={}", img.height);
    println!("width={}", img.width);
    println!("patches={}", grid.len());
    println!("detection_score={score:e}");
    println!(
        "per_patch_us={:.1}",
        elapsed.as_secs_f64() * 1e6 / grid.len() as f64
    );
    println!("soft_mask={}", files.soft_png.display());
    println!("soft_raw={}", files.soft_raw.display());
    println!("binary_mask={}", files.binary_png.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, prov: &Provenance) -> Result<(), CliError> {
    let m = manifest(cfg)?;
    let items = load_test_items(&cfg.paths.data, &m)?;
    if items.is_empty() {
        return Err(CliError::data("test split is empty"));
    }
    let classes = cfg.size_classes()?;
    let geo = cfg.geometry()?;
    let mut results: Vec<Evaluated> = Vec::new();
    for stage in cfg.strategies()? {
        let encoder = load_encoder(cfg, stage)?;
        let svm = load_model(cfg, stage)?;
        let start = Instant::now();
        let masks = soft_masks(&items, &encoder, &svm, geo)?;
        log::info!(
            "eval strategy={stage} images={} seconds={:.1}",
            items.len(),
            start.elapsed().as_secs_f64()
        );
        results.extend(detection_eval(&items, &masks, &classes, stage)?);
        results.extend(localization_eval(&items, &masks, &classes, stage)?);
    }
    let reports: Vec<AucReport> = results.iter().map(|r| r.report.clone()).collect();
    let dir = cfg.paths.outputs.join("eval");
    let tables = format!(
        "{}\n{}",
        render_table(&reports, Task::Detection),
        render_table(&reports, Task::Localization)
    );
    write(&dir.join("report.tsv"), &reports_to_tsv(&reports))?;
    write(&dir.join("report.txt"), &tables)?;
    write_curves(&dir.join("curves"), &results)?;
    cfg.write_effective(prov, &dir, "eval")?;
    print!("{tables}");
    println!("report={}", dir.join("report.tsv").display());
    Ok(())
}
