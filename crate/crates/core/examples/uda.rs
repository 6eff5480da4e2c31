//! Rings UDA: target accuracy with the regularizers vs λ=β=0 over seeds.
//!
//! `cargo run --release --example uda -- <iterations> <seeds> [key=value ...]`

use std::time::Instant;

use regcgan::eval::{correspondence_score, ground_truth, mean_std, uda_report};
use regcgan::trainer::{train, TrainConfig};

const CONFIG: &str = "dataset = rings\nuda = true\ncheckpoint_every = 0\n";

fn main() -> regcgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let int = |i: usize, default: u64| args.get(i).map_or(default, |a| a.parse().expect("integer argument"));
    let iterations = int(0, 5000);
    let seeds = int(1, 5);
    let extra: String = args
        .iter()
        .skip(2)
        .map(|kv| format!("{}\n", kv.replacen('=', " = ", 1)))
        .collect();
    let (mut reg, mut plain) = (Vec::new(), Vec::new());
    for seed in 0..seeds {
        let start = Instant::now();
        let mut accs = Vec::new();
        for regularized in [true, false] {
            let mut config = TrainConfig::from_text(&format!("{CONFIG}{extra}"))?;
            config.iterations = iterations;
            config.seed = seed;
            config.dataset = config.dataset.reseeded(seed);
            if !regularized {
                config.weights = config.weights.unregularized();
            }
            let ds = config.dataset.build()?;
            let test = config.dataset.build_test(2000)?;
            let done = train(config, &ds, None)?;
            let gt = ground_truth(&ds);
            let c = correspondence_score(&done.state.model.gen, gt, 1000, seed)?;
            println!(
                "  regularized={regularized} corr={:.4} baseline={:.4}",
                c.mean_error, c.baseline_error
            );
            accs.push(uda_report(&done.state.model, &ds, &test)?.acc_test);
        }
        println!(
            "seed={seed} reg={:.4} plain={:.4} secs={:.1}",
            accs[0],
            accs[1],
            start.elapsed().as_secs_f64()
        );
        reg.push(accs[0]);
        plain.push(accs[1]);
    }
    for (name, xs) in [("reg", &reg), ("plain", &plain)] {
        let (m, s) = mean_std(xs);
        println!("{name}: {m:.4} ± {s:.4}");
    }
    Ok(())
}
