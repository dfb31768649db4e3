use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use stmoe::backbones::BackboneKind;
use stmoe::dataio::{chronological_split, make_windows, Zscore};
use stmoe::moe::episodic_step;
use stmoe::msgd::grid_search_k;
use stmoe::synthbench::{make_ood_pair, SynthConfig};
use stmoe::tensor::{clip_grad_norm, Adam, ParamSet, Tape};
use stmoe::trainkit::{build_model, prepare_sample, ModelBundle, TrainConfig};

fn main() {
    let config = SynthConfig::example(42);
    let bench = make_ood_pair(&config).unwrap();
    let windows = make_windows(&bench.train, 12, 12, 1).unwrap();
    let splits = chronological_split(windows).unwrap();
    let train_end = splits.train.last().unwrap().offset + 24;
    let zscore = Zscore::fit(&bench.train, train_end).unwrap();
    let (part, _) = grid_search_k(&bench.train, &bench.graph, 2, 5, 6, 24, 1).unwrap();

    let cfg = TrainConfig::defaults(BackboneKind::MoeGnn, 42);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::new();
    let model = build_model(&cfg, 12, 1, 12, 12, 3, &mut params, &mut rng).unwrap();
    let ModelBundle::Moe(moe) = &model else { unreachable!() };

    let train_set: Vec<_> = splits
        .train
        .iter()
        .map(|ws| prepare_sample(ws, &zscore, Some(&part)))
        .collect();
    let mut opt = Adam::new(cfg.lr);
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;
    'outer: for epoch in 1..=cfg.max_epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<_> = chunk.iter().map(|&i| &train_set[i]).collect();
            params.zero_grads();
            let mut tape = Tape::new();
            let losses = episodic_step(&mut tape, &params, moe, &batch, &mut rng).unwrap();
            let loss_val = tape.value(losses.total).data()[0];
            let base = tape.value(losses.l_base).data()[0];
            let mix = tape.value(losses.l_mix).data()[0];
            tape.backward_params(losses.total, &mut params).unwrap();
            let mut gmax: f64 = 0.0;
            let mut pmax: f64 = 0.0;
            let mut bad_param = String::new();
            for (_, p) in params.iter() {
                for &g in p.grad.data() {
                    if !g.is_finite() && bad_param.is_empty() {
                        bad_param = format!("grad:{}", p.name);
                    }
                    gmax = gmax.max(g.abs());
                }
                for &v in p.value.data() {
                    if !v.is_finite() && bad_param.is_empty() {
                        bad_param = format!("value:{}", p.name);
                    }
                    pmax = pmax.max(v.abs());
                }
            }
            if step > 1750 || !loss_val.is_finite() || !bad_param.is_empty() {
                println!(
                    "epoch {epoch} step {step}: loss={loss_val:.6e} base={base:.6e} mix={mix:.6e} pmax={pmax:.3e} gmax={gmax:.3e} {bad_param}"
                );
            }
            if !loss_val.is_finite() || !bad_param.is_empty() {
                println!("STOP at epoch {epoch} step {step}");
                break 'outer;
            }
            clip_grad_norm(&mut params, cfg.grad_clip);
            opt.step(&mut params);
        }
    }
}
