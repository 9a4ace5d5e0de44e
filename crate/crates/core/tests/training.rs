use satforge::dataset::generate_base_image;
use satforge::models::{build_spec, init_weights, ArchId};
use satforge::numerics::{Dims4, Tensor4};
use satforge::pipeline::extract_patches;
use satforge::training::{train_autoencoder, train_gan, validation_mse, TrainConfig};

/// 25 patches per 192x192 image at stride 32.
fn patches(images: std::ops::Range<u64>) -> Tensor4<f32> {
    let grids: Vec<Tensor4<f32>> = images
        .map(|s| {
            extract_patches(&generate_base_image(192, 192, s), 64, 32)
                .unwrap()
                .patches
        })
        .collect();
    Tensor4::concat(&grids.iter().collect::<Vec<_>>()).unwrap()
}

#[test]
fn training_reduces_validation_error() {
    let (train, val) = (patches(0..8), patches(100..102));
    assert_eq!(train.dims().n, 200);
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 32,
        seed: 1,
        ..Default::default()
    };
    let (w, h) = train_autoencoder(&train, &val, &cfg).unwrap();
    assert!(
        h.best().val_mse < h.initial_val_mse,
        "{} vs {}",
        h.best().val_mse,
        h.initial_val_mse
    );
    // Returned weights are the best epoch's, not the last.
    let again = validation_mse(&w, &val).unwrap();
    assert!((again - h.best().val_mse).abs() <= 1e-9 * again.max(1.0));
    let untrained = init_weights::<f32>(&build_spec(ArchId::A4), 1);
    let trained_fit = validation_mse(&w, &train).unwrap();
    assert!(trained_fit < validation_mse(&untrained, &train).unwrap());
}

#[test]
fn constant_images_are_reconstructed_almost_exactly() {
    let n = 32;
    let t = Tensor4::from_vec(Dims4::new(n, 64, 64, 3), vec![0.4f32; n * 64 * 64 * 3]).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 2,
        seed: 2,
        ..Default::default()
    };
    let (_, h) = train_autoencoder(&t, &t, &cfg).unwrap();
    assert!(h.best().val_mse < 1e-3, "{:?}", h.val_mses());
    assert!(h.best().val_mse < h.initial_val_mse * 1e-2);
}

#[test]
fn discriminator_learns_to_separate() {
    let (train, val) = (patches(0..4), patches(200..202));
    let cfg = |epochs| TrainConfig {
        epochs,
        batch_size: 4,
        seed: 3,
        ..Default::default()
    };
    let (pre, _) = train_autoencoder(&train, &val, &cfg(2)).unwrap();
    let (_, h) = train_gan(&pre, &train, &val, &cfg(10)).unwrap();
    let best = h
        .records
        .iter()
        .filter_map(|r| r.disc_accuracy)
        .fold(0.0, f64::max);
    assert!(best > 0.6, "accuracies {:?}", h.records);
}
