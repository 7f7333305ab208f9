use std::time::Instant;
use tubesink::eval::probe::{linear_probe, pooled_features, labels_of, ProbeConfig};
use tubesink::synthetic::{generate_dataset, GeneratorConfig};
use tubesink::trainer::{train, Objective, TrainConfig, TrainState};

fn main() {
    // args: lambda lr epochs seeds tau K n_clips min_speed noise objects
    let args: Vec<String> = std::env::args().collect();
    let get = |i: usize, d: f64| args.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(d);
    let lambda = get(1, 20.0);
    let lr = get(2, 2e-3);
    let epochs = get(3, 24.0) as usize;
    let seeds = get(4, 1.0) as usize;
    let tau = get(5, 0.1);
    let k = get(6, 64.0) as usize;
    let n_clips = get(7, 48.0) as usize;
    let min_speed = get(8, 1.0);
    let noise = get(9, 0.02);
    let max_objects = get(10, 2.0) as usize;
    println!("lambda {lambda} lr {lr} epochs {epochs} tau {tau} K {k} clips {n_clips} min_speed {min_speed} noise {noise} max_obj {max_objects}");

    let generator = GeneratorConfig { min_speed, noise_std: noise, max_objects, ..Default::default() };
    let train_clips = generate_dataset(&generator, n_clips).unwrap();
    let eval_gen = GeneratorConfig { seed: 1000, ..generator.clone() };
    let eval_clips = generate_dataset(&eval_gen, 64).unwrap();
    let probe_cfg = ProbeConfig::default();
    let mut sums = [0.0f64; 4];
    for seed in 0..seeds as u64 {
        print!("seed {seed}:");
        for (i, (name, objective)) in [("random", None), ("sigma", Some(Objective::Sigma)),
                                  ("pixel", Some(Objective::PixelL2)), ("featl2", Some(Objective::FeatureL2))].iter().enumerate() {
            let mut config = TrainConfig { seed, learning_rate: lr, epochs, prototype_count: k, ..Default::default() };
            config.sigma.lambda = lambda;
            config.sigma.tau = tau;
            let t0 = Instant::now();
            let (state, metrics) = match objective {
                None => (TrainState::new(config).unwrap(), vec![]),
                Some(o) => {
                    let c = TrainConfig { objective: *o, ..config };
                    train(&generator, &train_clips, c).unwrap()
                }
            };
            let tf = pooled_features(&train_clips, &state).unwrap();
            let tl = labels_of(&train_clips).unwrap();
            let ef = pooled_features(&eval_clips, &state).unwrap();
            let el = labels_of(&eval_clips).unwrap();
            let acc = linear_probe(&tf, &tl, &ef, &el, &probe_cfg).unwrap();
            sums[i] += acc;
            let extra = metrics.last().map(|m| format!(" (loss {:.3} var {:.1e})", m.loss, m.feat_variance)).unwrap_or_default();
            print!("  {name} {acc:.3}{extra} [{:.0}s]", t0.elapsed().as_secs_f64());
        }
        println!();
    }
    println!("means: random {:.3} sigma {:.3} pixel {:.3} featl2 {:.3}",
        sums[0]/seeds as f64, sums[1]/seeds as f64, sums[2]/seeds as f64, sums[3]/seeds as f64);
}
