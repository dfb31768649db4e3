use std::time::Instant;

use stmoe::backbones::BackboneKind;
use stmoe::dataio::{chronological_split, make_windows, Zscore};
use stmoe::msgd::grid_search_k;
use stmoe::synthbench::{make_ood_pair, SynthConfig};
use stmoe::trainkit::{evaluate, train, TrainConfig};

fn main() {
    let t0 = Instant::now();
    let config = SynthConfig::example(42);
    let bench = make_ood_pair(&config).unwrap();

    let windows = make_windows(&bench.train, 12, 12, 1).unwrap();
    let splits = chronological_split(windows).unwrap();
    let train_end = splits.train.last().unwrap().offset + 24;
    let zscore = Zscore::fit(&bench.train, train_end).unwrap();

    let (part, curve) = grid_search_k(&bench.train, &bench.graph, 2, 5, 6, 24, 1).unwrap();
    println!(
        "partition k={} bounds={:?} curve={curve:?} [{:.1?}]",
        part.k(),
        part.boundaries,
        t0.elapsed()
    );

    let in_windows = make_windows(&bench.test_in, 12, 12, 1).unwrap();
    let ood_windows = make_windows(&bench.test_ood, 12, 12, 1).unwrap();

    let mut ratios = Vec::new();
    for kind in [
        BackboneKind::MoeGnn,
        BackboneKind::StaticGnn,
        BackboneKind::TemporalOnly,
    ] {
        let t = Instant::now();
        let cfg = TrainConfig::defaults(kind, 42);
        let out = train(&cfg, &splits, &zscore, Some(&part)).unwrap();
        let mae_in = evaluate(&out.model, &out.params, &in_windows, &zscore)
            .unwrap()
            .mae;
        let mae_ood = evaluate(&out.model, &out.params, &ood_windows, &zscore)
            .unwrap()
            .mae;
        println!(
            "{kind:?}: epochs={} best={} mae_in={mae_in:.4} mae_ood={mae_ood:.4} ratio={:.4} [{:.1?}]",
            out.val_curve.len(),
            out.best_epoch,
            mae_ood / mae_in,
            t.elapsed()
        );
        ratios.push((kind, mae_in, mae_ood / mae_in));
    }
    let (_, moe_in, moe_r) = ratios[0];
    let (_, st_in, st_r) = ratios[1];
    let (_, _, tmp_r) = ratios[2];
    println!(
        "C7a moe_in within 5% of static_in: {} ({:.4} vs {:.4})",
        moe_in <= st_in * 1.05,
        moe_in,
        st_in
    );
    println!(
        "C7b moe ratio >=10% lower: {} ({:.4} vs {:.4}, need <= {:.4})",
        moe_r <= 0.9 * st_r,
        moe_r,
        st_r,
        0.9 * st_r
    );
    println!("C7c temporal ratio < static ratio: {} ({:.4} vs {:.4})", tmp_r < st_r, tmp_r, st_r);
    println!("total [{:.1?}]", t0.elapsed());
}
