//! Built-in verification: parameter audit, gradient checks, SVM and AUC
//! oracles, and a negative control that must fail.

use crate::CliError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satforge::eval::{auc, pair_count_auc, roc, Orientation};
use satforge::models::{
    build_spec, init_weights, param_count, ArchId, FeatureVector, NetworkCheck,
};
use satforge::numerics::layercheck::{
    adjointness_error, layer_suite, layer_targets, CorruptedGradient,
};
use satforge::numerics::{grad_check, BnMode, Dims4, Tensor4};
use satforge::ocsvm::{box_bound, fit, oracle, outlier_fraction, SvmConfig};

/// Trainable parameters of A1..A4.
pub const EXPECTED_PARAMS: [(ArchId, usize); 4] = [
    (ArchId::A1, 997_299),
    (ArchId::A2, 84_547),
    (ArchId::A3, 124_883),
    (ArchId::A4, 135_939),
];
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

pub fn param_audit() -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for (id, want) in EXPECTED_PARAMS {
        let got = param_count(&build_spec(id));
        ok &= got == want;
        parts.push(format!("{}={got}", id.as_str()));
    }
    check("param_audit", ok, parts.join(" "))
}

pub fn feature_dim() -> Result<Check, CliError> {
    let w = init_weights::<f32>(&build_spec(ArchId::A4), 1);
    let x = Tensor4::random_uniform(
        Dims4::new(1, 64, 64, 3),
        -1.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(2),
    );
    let f = w.encode(&x)?;
    Ok(check(
        "feature_dim",
        f[0].len() == 2048,
        format!("dim={}", f[0].len()),
    ))
}

pub fn layer_gradients(samples: usize) -> Result<Vec<Check>, CliError> {
    Ok(layer_suite(GRAD_TOLERANCE, samples, 11)?
        .into_iter()
        .map(|(name, r)| {
            check(
                &format!("grad_layer {name}"),
                r.passed,
                format!("max_rel_error={:.3e}", r.max_rel_error),
            )
        })
        .collect())
}

pub fn adjointness() -> Result<Check, CliError> {
    let e = adjointness_error(3)?;
    Ok(check(
        "deconv_adjoint",
        e <= 1e-10,
        format!("max_rel_error={e:.3e}"),
    ))
}

/// Full A4 autoencoder on one patch at 64-bit, in both batch-norm modes.
pub fn network_gradients(samples: usize) -> Result<Vec<Check>, CliError> {
    let mut out = Vec::new();
    for (mode, label) in [(BnMode::Eval, "eval"), (BnMode::Train, "train")] {
        let w = init_weights::<f64>(&build_spec(ArchId::A4), 21);
        let x = Tensor4::random_uniform(
            Dims4::new(1, 64, 64, 3),
            -1.0,
            1.0,
            &mut ChaCha8Rng::seed_from_u64(22),
        );
        let mut c = NetworkCheck::new(w, x, mode, 23)?;
        if mode == BnMode::Eval {
            c.randomize_running_stats(24);
        }
        let r = grad_check(&mut c, GRAD_TOLERANCE, samples, 25)?;
        let worst = r
            .tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
        let detail = format!(
            "tensors={} max_rel_error={:.3e} worst={}",
            r.tensors.len(),
            r.max_rel_error,
            worst.map_or("-", |t| t.name.as_str())
        );
        out.push(check(&format!("grad_network A4 {label}"), r.passed, detail));
    }
    Ok(out)
}

/// Tiny problems against the brute-force QP.
pub fn svm_oracle() -> Result<Check, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut worst_obj, mut worst_sum, mut ok) = (0.0f64, 0.0f64, true);
    for trial in 0..24 {
        let n = rng.gen_range(2..=10);
        let nu = [0.1, 0.3, 0.5, 0.9][trial % 4];
        let pts: Vec<FeatureVector> = (0..n)
            .map(|_| FeatureVector((0..4).map(|_| rng.gen_range(-1.0f32..1.0)).collect()))
            .collect();
        let cfg = SvmConfig {
            gamma: 0.5,
            nu,
            tolerance: 1e-10,
            ..Default::default()
        };
        let m = fit(&pts, &cfg)?;
        let o = oracle::solve(&pts, cfg.gamma, nu)?;
        let alpha = m.full_alpha();
        let c = box_bound(nu, n);
        worst_obj = worst_obj.max((m.objective() - o.objective).abs());
        worst_sum = worst_sum.max((alpha.iter().sum::<f64>() - 1.0).abs());
        ok &= alpha.iter().all(|&a| (0.0..=c).contains(&a));
        ok &= outlier_fraction(&m.decision_batch(&pts)?, 1e-9) <= nu + 1.0 / n as f64;
    }
    ok &= worst_obj <= 1e-6 && worst_sum <= 1e-6;
    Ok(check(
        "svm_oracle",
        ok,
        format!("max_objective_gap={worst_obj:.3e} max_sum_error={worst_sum:.3e}"),
    ))
}

pub fn auc_oracle() -> Result<Check, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(2..=2000);
        let mut y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        y[0] = 0;
        y[1] = 1;
        // Coarse values so ties are common.
        let s: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.gen_range(0..50)) / 7.0)
            .collect();
        let a = auc(&roc(&s, &y, Orientation::LowerIsPositive)?);
        worst = worst.max((a - pair_count_auc(&s, &y, Orientation::LowerIsPositive)?).abs());
    }
    let y = [1, 1, 0, 0];
    let perfect = auc(&roc(
        &[0.0, 1.0, 2.0, 3.0],
        &y,
        Orientation::LowerIsPositive,
    )?);
    let anti = auc(&roc(
        &[3.0, 2.0, 1.0, 0.0],
        &y,
        Orientation::LowerIsPositive,
    )?);
    let constant = auc(&roc(&[1.0; 4], &y, Orientation::LowerIsPositive)?);
    let ok = worst <= 1e-12 && perfect == 1.0 && anti == 0.0 && constant == 0.5;
    Ok(check(
        "auc_oracle",
        ok,
        format!("max_gap={worst:.3e} perfect={perfect} anti={anti} constant={constant}"),
    ))
}

/// A checker that accepts a 1% gradient error is broken.
pub fn corrupted_control() -> Result<Check, CliError> {
    let (name, t) = layer_targets(5)?
        .into_iter()
        .next()
        .expect("at least one layer target");
    let mut bad = CorruptedGradient {
        inner: t,
        tensor: 1,
        factor: 1.01,
    };
    let r = grad_check(&mut bad, GRAD_TOLERANCE, 50, 0)?;
    Ok(check(
        "corrupted_control",
        !r.passed,
        format!(
            "target={name} max_rel_error={:.3e} rejected={}",
            r.max_rel_error, !r.passed
        ),
    ))
}

/// Run every check; `samples` bounds the entries sampled per gradient tensor.
pub fn run_all(samples: usize) -> Result<Vec<Check>, CliError> {
    let mut v = vec![param_audit(), feature_dim()?];
    v.extend(layer_gradients(samples)?);
    v.push(adjointness()?);
    v.extend(network_gradients(samples)?);
    v.push(svm_oracle()?);
    v.push(auc_oracle()?);
    v.push(corrupted_control()?);
    Ok(v)
}
