use stmoe::msgd::grid_search_k;
use stmoe::shiftmetrics::shift_report;
use stmoe::synthbench::{make_ood_pair, SynthConfig};

fn mean(v: &[Option<f64>]) -> f64 {
    let vals: Vec<f64> = v.iter().filter_map(|x| *x).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn main() {
    let seed = std::env::var("CALIB_SEED").map_or(42, |s| s.parse().unwrap());
    let mut config = SynthConfig::example(seed);
    if let Ok(n) = std::env::var("CALIB_NODES") {
        config.n_nodes = n.parse().unwrap();
    }
    if let Ok(r) = std::env::var("CALIB_RR") {
        config.regime_rewire = r.parse().unwrap();
    }
    if let Ok(s) = std::env::var("CALIB_NOISE") {
        config.noise_std = s.parse().unwrap();
    }
    let bench = make_ood_pair(&config).unwrap();
    let test_len = bench.test_in.steps();
    let train_tail = bench.train.slice_steps(bench.train.steps() - test_len..bench.train.steps()).unwrap();

    let rep_in = shift_report(&train_tail, &bench.test_in, &bench.graph, 0, false).unwrap();
    let rep_ood = shift_report(&train_tail, &bench.test_ood, &bench.graph, 0, false).unwrap();
    let tau_in = mean(&rep_in.per_node_tau);
    let tau_ood = mean(&rep_ood.per_node_tau);
    let dtw_in = mean(&rep_in.per_node_dtw.iter().map(|&d| Some(d)).collect::<Vec<_>>());
    let dtw_ood = mean(&rep_ood.per_node_dtw.iter().map(|&d| Some(d)).collect::<Vec<_>>());

    let mut taus = Vec::new();
    for p in [0.0, 0.15, 0.3, 0.5] {
        let mut c = config.clone();
        c.rewire_fraction = p;
        let b = make_ood_pair(&c).unwrap();
        let rep = shift_report(&train_tail, &b.test_ood, &b.graph, 0, false).unwrap();
        taus.push((p, mean(&rep.per_node_tau)));
    }

    let (part, curve) = grid_search_k(&bench.train, &bench.graph, 2, 5, 6, 24, 1).unwrap();
    let planted = [0usize, 18, 34];
    let found: Vec<usize> = part.boundaries.clone();
    let msgd_ok = part.k() == 3
        && found
            .iter()
            .zip(planted.iter())
            .all(|(&f, &p)| (f as i64 - p as i64).abs() <= 1);

    println!(
        "tau_in={tau_in:.4} tau_ood={tau_ood:.4} drop={:.4}",
        tau_in - tau_ood
    );
    println!(
        "dtw_in={dtw_in:.4} dtw_ood={dtw_ood:.4} rel={:.4}",
        (dtw_ood - dtw_in).abs() / dtw_in
    );
    let mono = taus.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    println!(
        "taus={:?} mono={}",
        taus.iter().map(|(p, t)| (*p, (t * 1e4).round() / 1e4)).collect::<Vec<_>>(),
        mono
    );
    println!("msgd k={} bounds={found:?} ok={msgd_ok} curve={curve:?}", part.k());
    println!(
        "SUMMARY drop={:.4} rel={:.4} mono={} msgd={}",
        tau_in - tau_ood,
        (dtw_ood - dtw_in).abs() / dtw_in,
        mono,
        msgd_ok
    );
}
