//! Scratch harness for tuning the synthetic adaptation experiment.

use fdan::data::{stratified_split, synth_domains, SynthSpec};
use fdan::model::ModelConfig;
use fdan::train::{train, Ablation, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let center_scale: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(250);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let d: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(8);
    let layers: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(2);
    let decay: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    println!("center_scale={center_scale} epochs={epochs} lr={lr} d={d} layers={layers} decay={decay}");

    let mut means = [0.0f64; 3];
    for seed in 1..=5u64 {
        let spec = SynthSpec {
            classes: 3,
            d_in: 16,
            samples_per_class: 60,
            center_scale,
            rotation_angle: 0.5,
            shift: 2.0,
            noise_std: 1.0,
            seed,
        };
        let (visual, acoustic) = synth_domains(&spec).unwrap();
        let (target_train, target_test) = stratified_split(&acoustic, 0.8, seed).unwrap();
        let arch = ModelConfig::new(16, 16, 3).with_dims(d, 2 * d, layers);

        let mut row = Vec::new();
        for (i, (ablation, alpha)) in [
            (Ablation::Full, 1e-3),
            (Ablation::NoAttention, 1e-3),
            (Ablation::NoLmmd, 0.0),
        ]
        .into_iter()
        .enumerate()
        {
            let config = TrainConfig {
                alpha,
                epochs,
                learning_rate: lr,
                weight_decay: decay,
                seed,
                ablation,
                ..TrainConfig::default()
            };
            let (_, history) = train(&config, &visual, &target_train, &target_test, &arch).unwrap();
            let war = history.last().unwrap().war;
            means[i] += war / 5.0;
            row.push(format!("{war:.3}"));
        }
        println!("  seed {seed}: full {} | no-attn {} | no-lmmd {}", row[0], row[1], row[2]);
    }
    println!(
        "means: full {:.4} | no-attn {:.4} | no-lmmd {:.4} | full-vs-nolmmd {:+.2}pp | full-vs-noattn {:+.2}pp",
        means[0], means[1], means[2],
        (means[0] - means[2]) * 100.0,
        (means[0] - means[1]) * 100.0
    );
}
