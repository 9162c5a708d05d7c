//! End-to-end training demo on synthetic phantoms, entirely in memory:
//! generate, preprocess, train the small 3D model, and evaluate held-out
//! volumes.
//!
//! Run: cargo run --release -p vcnn --example train_phantoms

use vcnn::model::build_model_3d_small;
use vcnn::niftio::{gen_phantom, normalize_intensity, resample, AgeClass, ResampleMethod};
use vcnn::train::{evaluate, train, Dataset, Sample, TrainConfig};

fn sample(class: AgeClass, seed: u64) -> Sample<f32> {
    let vol = gen_phantom(class, seed);
    let small = resample(&vol, [32, 32, 32], ResampleMethod::Trilinear).unwrap();
    let normalized = normalize_intensity(&small);
    Sample {
        input: normalized.voxels.reshape(&[32, 32, 32, 1]).unwrap(),
        label: class.index(),
    }
}

fn main() {
    let train_data: Dataset<f32> = (0..8)
        .flat_map(|i| AgeClass::ALL.iter().map(move |&c| sample(c, i)))
        .collect();
    let heldout: Dataset<f32> = (100..104)
        .flat_map(|i| AgeClass::ALL.iter().map(move |&c| sample(c, i)))
        .collect();
    println!(
        "training on {} phantoms, holding out {}",
        train_data.len(),
        heldout.len()
    );

    let cfg = TrainConfig {
        epochs: 12,
        seed: 42,
        ..TrainConfig::default()
    };
    let mut model = build_model_3d_small::<f32>().unwrap();
    model.init_params(cfg.seed);

    train(&mut model, &train_data, &heldout, &cfg, |r| {
        println!(
            "epoch {:>2}: train loss {:.4} acc {:.3} | held-out loss {:.4} acc {:.3}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
        );
    })
    .unwrap();

    let eval = evaluate(&model, &heldout).unwrap();
    println!("held-out accuracy: {:.3}", eval.accuracy);
}
