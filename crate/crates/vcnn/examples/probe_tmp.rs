// Probe: larger rmsprop epsilon for smooth late-stage descent.
use vcnn::model::build_model_3d_small;
use vcnn::niftio::{gen_phantom_with, normalize_intensity, resample, AgeClass, ResampleMethod};
use vcnn::train::{train, Dataset, Sample, TrainConfig};

fn sample(class: AgeClass, seed: u64) -> Sample<f32> {
    let vol = gen_phantom_with(class, seed, 80, 0.05);
    let small = resample(&vol, [32, 32, 32], ResampleMethod::Trilinear).unwrap();
    let n = normalize_intensity(&small);
    Sample { input: n.voxels.reshape(&[32, 32, 32, 1]).unwrap(), label: class.index() }
}

fn main() {
    let data: Dataset<f32> = (0..4)
        .flat_map(|i| AgeClass::ALL.iter().map(move |&c| sample(c, i)))
        .collect();
    for (lr, eps) in [(1e-4, 1e-4), (1e-4, 1e-3), (2e-4, 1e-3), (3e-4, 1e-3), (2e-4, 1e-4)] {
        for bs in [4usize, 12] {
            let mut ok = 0;
            for seed in 0..6u64 {
                let cfg = TrainConfig { epochs: 30, seed, batch_size: bs, learning_rate: lr, rmsprop_epsilon: eps, ..TrainConfig::default() };
                let mut model = build_model_3d_small::<f32>().unwrap();
                model.init_params(cfg.seed);
                let recs = train(&mut model, &data, &data, &cfg, |_| {}).unwrap();
                let acc100 = recs.iter().position(|r| r.train_accuracy == 1.0);
                let check = |ls: &[f64]| {
                    let sm: Vec<f64> = ls.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
                    sm.windows(2).all(|p| p[1] <= p[0] + 1e-9)
                };
                let tl: Vec<f64> = recs.iter().map(|r| r.train_loss).collect();
                let el: Vec<f64> = recs.iter().map(|r| r.val_loss).collect();
                let good = acc100.is_some() && check(&el);
                if good { ok += 1; }
                println!("lr={lr} eps={eps} bs={bs} seed={seed}: acc100@{acc100:?} train_mono={} eval_mono={}", check(&tl), check(&el));
            }
            println!("  -> lr={lr} eps={eps} bs={bs}: {ok}/6 seeds good");
        }
    }
}
