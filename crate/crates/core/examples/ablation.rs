//! Regularized vs λ=β=0 correspondence on glyph/negative over several seeds.
//!
//! `cargo run --release --example ablation -- <width> <iterations> <seeds> [n_eval]`

use std::time::Instant;

use regcgan::data::GlyphTransform;
use regcgan::eval::{ablation_compare, mean_std};
use regcgan::trainer::{DatasetSpec, NetConfig, TrainConfig};

fn main() -> regcgan::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let width = args.first().copied().unwrap_or(64);
    let iterations = args.get(1).copied().unwrap_or(5000);
    let seeds = args.get(2).copied().unwrap_or(5);
    let n_eval = args.get(3).copied().unwrap_or(500);
    let (mut reg, mut plain, mut base) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..seeds as u64 {
        let start = Instant::now();
        let config = TrainConfig {
            seed,
            iterations: iterations as u64,
            checkpoint_every: 0,
            net: NetConfig {
                width,
                ..NetConfig::default()
            },
            dataset: DatasetSpec::Glyphs {
                n: 2000,
                resolution: 16,
                transform: GlyphTransform::Negative,
                seed,
            },
            ..TrainConfig::default()
        };
        let ds = config.dataset.build()?;
        let r = ablation_compare(&config, &ds, n_eval, seed)?;
        println!(
            "seed={seed} reg={:.5} plain={:.5} baseline={:.5} secs={:.1}",
            r.regularized.mean_error,
            r.unregularized.mean_error,
            r.regularized.baseline_error,
            start.elapsed().as_secs_f64()
        );
        reg.push(r.regularized.mean_error);
        plain.push(r.unregularized.mean_error);
        base.push(r.regularized.baseline_error);
    }
    for (name, xs) in [("reg", &reg), ("plain", &plain), ("baseline", &base)] {
        let (m, s) = mean_std(xs);
        println!("{name}: {m:.5} ± {s:.5}");
    }
    Ok(())
}
