use tubesink::nets::params::BoundParams;
use tubesink::prototypes::scores;
use tubesink::rng::stream;
use tubesink::sinkhorn::{entropy, pseudo_labels, sinkhorn, OtProblem, SinkhornMode};
use tubesink::synthetic::{generate_dataset, GeneratorConfig};
use tubesink::tape::Tape;
use tubesink::tensor::Tensor;
use tubesink::tokenize::{extract_tubes, sample_mask, inverse_mask_select};
use tubesink::trainer::{Objective, TrainConfig, Trainer, TrainState};

fn stats(state: &TrainState, generator: &GeneratorConfig, clips: &[tubesink::synthetic::VideoClip], lambda: f64, iters: usize) {
    // Re-derive one batch of features (first 8 clips, epoch-0 masks).
    let cfg = &state.config;
    let mut psi_rows: Vec<Tensor> = Vec::new();
    let mut phi_rows: Vec<Tensor> = Vec::new();
    for clip in clips.iter().take(8) {
        let (raw, positions) = extract_tubes(clip, &cfg.geometry).unwrap();
        let mut rng = stream(cfg.seed, "mask", 0, clip.clip_id);
        let mask = sample_mask(raw.rows(), cfg.mask_ratio, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&state.store, &mut tape);
        let visible: Vec<usize> = mask.visible_idx.clone();
        let vis_raw = {
            let mut t = Tensor::zeros(visible.len(), raw.cols());
            for (r, &i) in visible.iter().enumerate() { t.row_mut(r).copy_from_slice(raw.row(i)); }
            t
        };
        let vis_pos: Vec<[usize;3]> = visible.iter().map(|&i| positions[i]).collect();
        let m_pos: Vec<[usize;3]> = mask.masked_idx.iter().map(|&i| positions[i]).collect();
        let tokens = state.psi.embed(&mut tape, &bound, &vis_raw).unwrap();
        let out = state.psi.forward(&mut tape, &bound, tokens, &vis_pos, &m_pos, None).unwrap();
        psi_rows.push(tape.value(out.features).clone());
        let masked_raw = inverse_mask_select(&raw, &mask).unwrap();
        if let Some(phi) = &state.phi {
            let o = phi.forward(&mut tape, &bound, &masked_raw).unwrap();
            phi_rows.push(tape.value(o).clone());
        }
        let _ = generator;
    }
    let stack = |rows: &[Tensor]| {
        let cols = rows[0].cols();
        let n: usize = rows.iter().map(|r| r.rows()).sum();
        let mut t = Tensor::zeros(n, cols);
        let mut at = 0;
        for r in rows { for i in 0..r.rows() { t.row_mut(at).copy_from_slice(r.row(i)); at += 1; } }
        t
    };
    let x_psi = stack(&psi_rows);
    let x_phi = stack(&phi_rows);
    let bank = state.bank.as_ref().unwrap().matrix(&state.store);
    for (name, x) in [("psi", &x_psi), ("phi", &x_phi)] {
        let s = scores(x, bank, true).unwrap();
        // spread across prototypes per sample
        let mut spread = 0.0;
        for i in 0..s.rows() {
            let row = s.row(i);
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            let min = row.iter().cloned().fold(f64::MAX, f64::min);
            spread += max - min;
        }
        spread /= s.rows() as f64;
        let problem = OtProblem::new(s.transpose(), lambda).unwrap();
        let a = sinkhorn(&problem, &SinkhornMode::FixedIterations(iters)).unwrap();
        let q = pseudo_labels(&a).unwrap();
        let mean_h: f64 = (0..q.rows()).map(|i| entropy(q.row(i))).sum::<f64>() / q.rows() as f64;
        println!("    {name}: score spread {spread:.4}, q row-entropy {:.3} (lnK={:.3})", mean_h, (bank.rows() as f64).ln());
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let lambda: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20.0);
    let wd: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(12);
    let k: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(64);

    let generator = GeneratorConfig::default();
    let clips = generate_dataset(&generator, 48).unwrap();
    let mut config = TrainConfig { objective: Objective::Sigma, learning_rate: lr, epochs, prototype_count: k, ..Default::default() };
    config.sigma.lambda = lambda;
    config.optimizer.weight_decay = wd;
    println!("lr {lr} lambda {lambda} wd {wd} epochs {epochs} K {k}");
    let mut trainer = Trainer::new(&generator, &clips, config).unwrap();
    let total = trainer.total_steps();
    for s in 0..total {
        let m = trainer.step().unwrap();
        if s % (total / 6).max(1) == 0 || s + 1 == total {
            println!("s{:<4} loss {:8.4} var {:.2e}", m.step, m.loss, m.feat_variance);
            stats(trainer.state(), &generator, &clips, lambda, 3);
        }
    }
}
