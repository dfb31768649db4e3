//! Command-line front end for the forecasting pipeline: generate benchmark
//! data, diagnose spatial shift, search day partitions, train, evaluate,
//! and inspect learned graphons.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use stmoe::dataio::{
    chronological_split, load_graph, load_signals, make_windows, save_graph, save_signals,
    SignalFormat, Zscore,
};
use stmoe::msgd::{grid_search_k, DayPartition};
use stmoe::shiftmetrics::{render_tsv, shift_report};
use stmoe::synthbench::{make_ood_pair, manifest, RegimeSpec, SynthConfig};
use stmoe::tensor::Tape;
use stmoe::trainkit::{
    checkpoint_tensors, evaluate, load_checkpoint, render_metrics_tsv, restore_model,
    save_checkpoint, train, CheckpointMeta, ModelBundle, TrainConfig,
};

#[derive(Parser)]
#[command(name = "stmoe", version, about = "Spatiotemporal forecasting under spatial shift")]
struct Cli {
    /// Worker threads for parallel sections; output is identical for any
    /// value. Defaults to the number of cores.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded benchmark: train/in-dist/OOD signal CSVs, the road
    /// graph, and a manifest, into --out.
    Synth {
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        nodes: usize,
        /// Training days; the two test periods use --test-days each.
        #[arg(long, default_value_t = 30)]
        days: usize,
        #[arg(long, default_value_t = 6)]
        test_days: usize,
        /// Number of planted intra-day regimes.
        #[arg(long, default_value_t = 3)]
        regimes: usize,
        /// Fraction of edges rewired between the in-dist and OOD graphs.
        #[arg(long, default_value_t = 0.3)]
        rewire: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 48)]
        slots_per_day: usize,
        #[arg(long, default_value_t = 3.0)]
        degree: f64,
        /// Observation noise of the generator.
        #[arg(long)]
        noise: Option<f64>,
        /// Fraction of entries zeroed to exercise the missing-data mask.
        #[arg(long, default_value_t = 0.0)]
        zero_fraction: f64,
    },

    /// Rank-agreement (tau) and warping-distance (DTW) report between two
    /// periods of the same sensor network, as TSV on stdout.
    AnalyzeShift {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Warp raw values instead of per-period standardized ones.
        #[arg(long)]
        raw_dtw: bool,
        /// Append histogram rows to the report.
        #[arg(long)]
        histogram: bool,
    },

    /// Search day partitions over a K range, print the score-vs-K curve and
    /// the chosen partition, and optionally save it.
    Partition {
        /// Training signals (CSV).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 2)]
        k_min: usize,
        #[arg(long, default_value_t = 5)]
        k_max: usize,
        /// Minimum interval length (exclusive bound).
        #[arg(long, default_value_t = 6)]
        alpha1: usize,
        /// Maximum interval length (exclusive bound); defaults to the day
        /// length.
        #[arg(long)]
        alpha2: Option<usize>,
        /// Coarse boundary grid stride in slots.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Where to write the chosen partition.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Fit a backbone on a signal file (or a synth --out directory) and
    /// save a checkpoint.
    Train {
        /// Signal CSV, or a directory containing train.csv.
        #[arg(long)]
        data: PathBuf,
        /// moe_gnn, static_gnn, or temporal_only.
        #[arg(long)]
        backbone: String,
        /// Day partition file; required for moe_gnn.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Input window length.
        #[arg(long, default_value_t = 12)]
        l1: usize,
        /// Forecast horizon.
        #[arg(long, default_value_t = 12)]
        l2: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 15)]
        patience: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Weight of the gate reconstruction loss.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Gumbel sampling temperature.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 16)]
        embed_dim: usize,
        #[arg(long, default_value_t = 64)]
        encoder_hidden: usize,
        #[arg(long, default_value_t = 64)]
        gate_hidden: usize,
        #[arg(long, default_value_t = 5.0)]
        grad_clip: f64,
    },

    /// Masked metrics of a checkpoint over every window of a signal file,
    /// as TSV on stdout.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Signal CSV, or a directory containing test CSVs (then --which
        /// picks one).
        #[arg(long)]
        data: PathBuf,
        /// File stem used when --data is a directory: indist or ood.
        #[arg(long, default_value = "indist")]
        which: String,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },

    /// Write every expert graphon and the gate weights for one probe window
    /// to a tensor file in the checkpoint layout.
    ExportGraphons {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Signals supplying the probe window.
        #[arg(long)]
        data: PathBuf,
        /// Index of the probe window.
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("worker pool")?;
    }
    match cli.command {
        Command::Synth {
            out,
            nodes,
            days,
            test_days,
            regimes,
            rewire,
            seed,
            slots_per_day,
            degree,
            noise,
            zero_fraction,
        } => cmd_synth(
            &out,
            nodes,
            days,
            test_days,
            regimes,
            rewire,
            seed,
            slots_per_day,
            degree,
            noise,
            zero_fraction,
        ),
        Command::AnalyzeShift {
            train,
            test,
            graph,
            channel,
            raw_dtw,
            histogram,
        } => cmd_analyze_shift(&train, &test, &graph, channel, raw_dtw, histogram),
        Command::Partition {
            data,
            graph,
            k_min,
            k_max,
            alpha1,
            alpha2,
            stride,
            out,
        } => cmd_partition(&data, &graph, k_min, k_max, alpha1, alpha2, stride, out.as_deref()),
        Command::Train {
            data,
            backbone,
            partition,
            seed,
            out,
            l1,
            l2,
            stride,
            epochs,
            patience,
            batch_size,
            lr,
            lambda,
            temperature,
            hidden,
            layers,
            embed_dim,
            encoder_hidden,
            gate_hidden,
            grad_clip,
        } => {
            let config = TrainConfig {
                backbone: backbone.parse()?,
                max_epochs: epochs,
                patience,
                batch_size,
                lr,
                lambda,
                temperature,
                grad_clip,
                seed,
                hidden,
                layers,
                embed_dim,
                encoder_hidden,
                gate_hidden,
            };
            cmd_train(&data, &config, partition.as_deref(), &out, l1, l2, stride)
        }
        Command::Evaluate {
            checkpoint,
            data,
            which,
            stride,
        } => cmd_evaluate(&checkpoint, &data, &which, stride),
        Command::ExportGraphons {
            checkpoint,
            data,
            window,
            out,
        } => cmd_export_graphons(&checkpoint, &data, window, &out),
    }
}

/// Evenly spaced regime layout reusing the example's diffusion strength and
/// seed sequence; the 3-regime day keeps the example's layout unchanged.
fn regime_layout(base: &SynthConfig, count: usize, slots_per_day: usize) -> Result<Vec<RegimeSpec>> {
    if count == 0 {
        bail!("need at least one regime");
    }
    if count == base.regimes.len() && slots_per_day == base.slots_per_day {
        return Ok(base.regimes.clone());
    }
    if count > slots_per_day {
        bail!("{count} regimes cannot fit in {slots_per_day} slots");
    }
    let rho = base.regimes[0].rho;
    let seed0 = base.regimes[0].seed;
    Ok((0..count)
        .map(|i| RegimeSpec {
            start_slot: i * slots_per_day / count,
            rho,
            seed: seed0 + i as u64,
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    out: &Path,
    nodes: usize,
    days: usize,
    test_days: usize,
    regimes: usize,
    rewire: f64,
    seed: u64,
    slots_per_day: usize,
    degree: f64,
    noise: Option<f64>,
    zero_fraction: f64,
) -> Result<()> {
    let mut config = SynthConfig::example(seed);
    config.regimes = regime_layout(&config, regimes, slots_per_day)?;
    config.n_nodes = nodes;
    config.avg_degree = degree;
    config.slots_per_day = slots_per_day;
    config.n_days_train = days;
    config.n_days_test = test_days;
    config.rewire_fraction = rewire;
    config.zero_fraction = zero_fraction;
    if let Some(n) = noise {
        config.noise_std = n;
    }
    let bench = make_ood_pair(&config)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_signals(&bench.train, &out.join("train.csv"), SignalFormat::Csv)?;
    save_signals(&bench.test_in, &out.join("indist.csv"), SignalFormat::Csv)?;
    save_signals(&bench.test_ood, &out.join("ood.csv"), SignalFormat::Csv)?;
    save_graph(&bench.graph, &out.join("graph.csv"))?;
    std::fs::write(out.join("manifest.txt"), manifest(&config))
        .with_context(|| format!("writing manifest in {}", out.display()))?;
    println!(
        "wrote train/indist/ood CSVs, graph.csv, manifest.txt to {}",
        out.display()
    );
    Ok(())
}

fn cmd_analyze_shift(
    train: &Path,
    test: &Path,
    graph: &Path,
    channel: usize,
    raw_dtw: bool,
    histogram: bool,
) -> Result<()> {
    let mut period1 = load_signals(train, SignalFormat::Csv)?;
    let mut period2 = load_signals(test, SignalFormat::Csv)?;
    let g = load_graph(graph)?;
    // The report compares equal-length periods; when one file is longer,
    // its most recent stretch is the relevant history.
    let len = period1.steps().min(period2.steps());
    if period1.steps() > len {
        period1 = period1.slice_steps(period1.steps() - len..period1.steps())?;
    }
    if period2.steps() > len {
        period2 = period2.slice_steps(period2.steps() - len..period2.steps())?;
    }
    let report = shift_report(&period1, &period2, &g, channel, raw_dtw)?;
    print!("{}", render_tsv(&report, histogram));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_partition(
    data: &Path,
    graph: &Path,
    k_min: usize,
    k_max: usize,
    alpha1: usize,
    alpha2: Option<usize>,
    stride: usize,
    out: Option<&Path>,
) -> Result<()> {
    let series = load_signals(data, SignalFormat::Csv)?;
    let g = load_graph(graph)?;
    let alpha2 = alpha2.unwrap_or(series.slots_per_day);
    let (best, curve) = grid_search_k(&series, &g, k_min, k_max, alpha1, alpha2, stride)?;
    println!("k\tscore");
    for (k, score) in &curve {
        println!("{k}\t{score}");
    }
    println!(
        "chosen\tk={} boundaries={} score={}",
        best.k(),
        best.boundaries
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(","),
        best.score
    );
    if let Some(path) = out {
        best.save(path)?;
    }
    Ok(())
}

/// `--data` accepts either a signal CSV or a benchmark directory holding
/// train.csv.
fn training_file(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("train.csv")
    } else {
        data.to_path_buf()
    }
}

fn cmd_train(
    data: &Path,
    config: &TrainConfig,
    partition: Option<&Path>,
    out: &Path,
    l1: usize,
    l2: usize,
    stride: usize,
) -> Result<()> {
    let series = load_signals(&training_file(data), SignalFormat::Csv)?;
    let windows = make_windows(&series, l1, l2, stride)?;
    let splits = chronological_split(windows)?;
    let train_end = splits
        .train
        .last()
        .map(|w| w.offset + l1 + l2)
        .context("empty training split")?;
    let zscore = Zscore::fit(&series, train_end)?;
    let part = partition.map(DayPartition::load).transpose()?;
    let outcome = train(config, &splits, &zscore, part.as_ref())?;
    for (epoch, (tr, va)) in outcome
        .train_curve
        .iter()
        .zip(&outcome.val_curve)
        .enumerate()
    {
        println!("epoch {}\ttrain_loss {tr}\tval_mae {va}", epoch + 1);
    }
    save_checkpoint(&checkpoint_tensors(&outcome.params), &outcome.meta, out)?;
    println!(
        "saved checkpoint (best epoch {}, val mae {}) to {}",
        outcome.best_epoch,
        outcome.val_curve[outcome.best_epoch - 1],
        out.display()
    );
    Ok(())
}

fn meta_usize(meta: &CheckpointMeta, key: &str) -> Result<usize> {
    meta.get(key)
        .with_context(|| format!("checkpoint metadata missing {key}"))?
        .parse()
        .with_context(|| format!("checkpoint metadata {key} is not an integer"))
}

fn evaluation_file(data: &Path, which: &str) -> Result<PathBuf> {
    if data.is_dir() {
        match which {
            "indist" | "ood" | "train" => Ok(data.join(format!("{which}.csv"))),
            other => bail!("--which must be indist, ood, or train, got {other}"),
        }
    } else {
        Ok(data.to_path_buf())
    }
}

fn cmd_evaluate(checkpoint: &Path, data: &Path, which: &str, stride: usize) -> Result<()> {
    let (tensors, meta) = load_checkpoint(checkpoint)?;
    let (model, params, zscore) = restore_model(&tensors, &meta)?;
    let l1 = meta_usize(&meta, "l1")?;
    let l2 = meta_usize(&meta, "l2")?;
    let series = load_signals(&evaluation_file(data, which)?, SignalFormat::Csv)?;
    let windows = make_windows(&series, l1, l2, stride)?;
    let row = evaluate(&model, &params, &windows, &zscore)?;
    print!("{}", render_metrics_tsv(&row));
    Ok(())
}

fn cmd_export_graphons(checkpoint: &Path, data: &Path, window: usize, out: &Path) -> Result<()> {
    let (tensors, meta) = load_checkpoint(checkpoint)?;
    let (model, params, zscore) = restore_model(&tensors, &meta)?;
    let ModelBundle::Moe(moe) = &model else {
        bail!(
            "checkpoint holds a {} model, which has no expert graphons",
            model.kind()
        );
    };
    let l1 = meta_usize(&meta, "l1")?;
    let l2 = meta_usize(&meta, "l2")?;
    let series = load_signals(&evaluation_file(data, "indist")?, SignalFormat::Csv)?;
    let windows = make_windows(&series, l1, l2, 1)?;
    let probe = windows
        .get(window)
        .with_context(|| format!("probe window {window} out of range (have {})", windows.len()))?;

    let channels = probe.x.shape()[2];
    let mut x = stmoe::dataio::flatten_window(&probe.x);
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            x.set(i, j, zscore.normalize(x.get(i, j), j % channels));
        }
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let e_t = moe.encoder.forward(&mut tape, &params, xv)?;
    let graphons = moe.graphons(&mut tape, &params, e_t)?;
    let weights = stmoe::moe::gate_weights(&mut tape, &params, &moe.gate, xv, None)?;

    let mut export = Vec::with_capacity(graphons.len() + 1);
    for (k, g) in graphons.iter().enumerate() {
        export.push((format!("graphon_{k}"), tape.value(*g).clone()));
    }
    export.push(("gate_weights".to_string(), tape.value(weights).clone()));
    let mut out_meta = CheckpointMeta::default();
    out_meta.push("k", graphons.len());
    out_meta.push("n_nodes", moe.config.n_nodes);
    out_meta.push("probe_window", window);
    out_meta.push("source_checkpoint", checkpoint.display());
    save_checkpoint(&export, &out_meta, out)?;
    println!(
        "wrote {} graphons and gate weights to {}",
        graphons.len(),
        out.display()
    );
    Ok(())
}
