use satforge::dataset::generate_base_image;
use satforge::image::{load_mask, save_image};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_satforge"));
    c.env_remove("SATFORGE_CONFIG").env("RUST_LOG", "warn");
    c
}

/// Small images so the whole workflow runs in seconds.
fn small(dir: &Path) -> Vec<String> {
    [
        format!("--data={}", dir.join("data").display()),
        format!("--models={}", dir.join("models").display()),
        format!("--outputs={}", dir.join("out").display()),
        "--set=dataset.images=13".into(),
        "--set=dataset.height=192".into(),
        "--set=dataset.width=192".into(),
        "--set=train.batch_size=16".into(),
    ]
    .into()
}

fn run(args: &[String]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[String]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn value<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {stdout}"))
}

fn args(dir: &Path, extra: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
    v.extend(small(dir));
    v
}

#[test]
fn help_and_usage_errors() {
    assert!(bin().arg("--help").status().unwrap().success());
    assert_eq!(
        bin().arg("--no-such-flag").status().unwrap().code(),
        Some(1)
    );
    assert_eq!(
        bin()
            .args(["train", "--strategy", "both"])
            .status()
            .unwrap()
            .code(),
        Some(1)
    );
    assert_eq!(
        bin()
            .args(["eval", "--set", "svm.mu=1"])
            .status()
            .unwrap()
            .code(),
        Some(1)
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[train]\nepoch = 3\n").unwrap();
    let code = bin()
        .arg("eval")
        .env("SATFORGE_CONFIG", &cfg)
        .status()
        .unwrap()
        .code();
    assert_eq!(code, Some(1));
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&args(dir.path(), &["train"])).status.code(), Some(2));
    ok(&args(dir.path(), &["gen-data"]));
    let out = run(&args(dir.path(), &["train", "--strategy", "gan"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("plain"));
    assert_eq!(run(&args(dir.path(), &["fit-svm"])).status.code(), Some(2));
    assert_eq!(run(&args(dir.path(), &["eval"])).status.code(), Some(2));
}

#[test]
fn desk_scale_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = [
        "gen-data".to_string(),
        "--scale=desk".into(),
        "--set=dataset.height=192".into(),
        "--set=dataset.width=192".into(),
        format!("--data={}", dir.path().display()),
    ];
    let out = ok(&a);
    assert_eq!(value(&out, "base_images"), "13");
    assert_eq!(value(&out, "test_forged"), "15");
    let again = ok(&a);
    assert_eq!(value(&out, "manifest_hash"), value(&again, "manifest_hash"));
}

#[test]
fn config_file_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "seed = 99\n[dataset]\nimages = 5\nheight = 192\nwidth = 192\n",
    )
    .unwrap();
    let data = dir.path().join("d");
    let out = bin()
        .args(["gen-data", &format!("--data={}", data.display())])
        .env("SATFORGE_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let eff = fs::read_to_string(data.join("gen-data.config.toml")).unwrap();
    assert!(eff.contains("seed = 99"));
    assert!(eff.contains(&format!("# file: {}", cfg.display())));
    assert!(eff.contains("# override: paths.data="));
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let gen = ok(&args(dir, &["gen-data"]));
    let forged: usize = value(&gen, "test_forged").parse().unwrap();
    let pristine: usize = value(&gen, "test_pristine").parse().unwrap();

    let plain = ok(&args(dir, &["train", "--epochs", "2"]));
    assert_eq!(value(&plain, "epochs"), "2");
    assert_eq!(value(&plain, "arch"), "A4");
    let hist = fs::read_to_string(dir.join("models/plain/history.tsv")).unwrap();
    assert_eq!(hist.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2);
    assert!(dir
        .join("models/plain/checkpoints/plain_epoch002.weights")
        .exists());
    assert!(dir.join("models/plain/train.config.toml").exists());

    ok(&args(dir, &["train", "--strategy", "gan", "--epochs", "2"]));
    for stage in ["plain", "gan"] {
        let fit = ok(&args(dir, &["fit-svm", "--strategy", stage]));
        assert_eq!(value(&fit, "gamma"), "0.00048828125");
        assert_eq!(value(&fit, "nu"), "1e-5");
        assert!(value(&fit, "support_vectors").parse::<usize>().unwrap() >= 1);
        value(&fit, "kkt_violation");
    }

    let img = dir.join("big.png");
    save_image(&generate_base_image(650, 650, 4), &img).unwrap();
    let inf = ok(&args(
        dir,
        &["infer", "--image", img.to_str().unwrap(), "--stride", "64"],
    ));
    assert_eq!(value(&inf, "patches"), "100");
    value(&inf, "per_patch_us").parse::<f64>().unwrap();
    let mask = load_mask(Path::new(value(&inf, "binary_mask"))).unwrap();
    assert_eq!((mask.height, mask.width), (650, 650));
    assert!(Path::new(value(&inf, "soft_raw")).exists());

    let ev = ok(&args(dir, &["eval"]));
    assert!(ev.contains("Detection results in terms of AUC"));
    let tsv = fs::read_to_string(dir.join("out/eval/report.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = tsv
        .lines()
        .skip(1)
        .map(|l| l.split('\t').collect())
        .collect();
    assert_eq!(rows.len(), 2 * 3 * 2);
    for r in rows.iter().filter(|r| r[0] == "detection") {
        // Every pristine test image against the forged images of one class.
        assert_eq!(r[4].parse::<usize>().unwrap(), forged / 3);
        assert_eq!(r[5].parse::<usize>().unwrap(), pristine);
        let auc: f64 = r[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&auc));
    }
    assert!(dir
        .join("out/eval/curves/localization_large_gan.roc")
        .exists());
}

#[test]
fn reruns_are_identical() {
    let hashes: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let dir = tmp.path();
            ok(&args(dir, &["gen-data", "--seed", "3"]));
            ok(&args(dir, &["train", "--epochs", "1", "--seed", "3"]));
            ok(&args(
                dir,
                &["fit-svm", "--strategy", "plain", "--seed", "3"],
            ));
            let mut bytes = fs::read(dir.join("data/manifest.tsv")).unwrap();
            bytes.extend(fs::read(dir.join("models/plain/best.weights")).unwrap());
            bytes.extend(fs::read(dir.join("models/plain/svm.bin")).unwrap());
            bytes
        })
        .collect();
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn selfcheck_passes() {
    let out = ok(&["selfcheck".to_string(), "--quick".into()]);
    assert!(out.contains("A1=997299 A2=84547 A3=124883 A4=135939"));
    assert!(out.contains("check=\"corrupted_control\" status=pass"));
    assert_eq!(value(&out, "checks=23 failed"), "0");
}
