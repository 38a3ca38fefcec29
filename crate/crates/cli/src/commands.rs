use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use deeprls_core::deep::{
    evaluate_per_sequence, load_model, save_model, sequence_metrics, train as train_model, DeepRlsModel, Metrics,
    TrainConfig,
};
use deeprls_core::experiment::{format_f64, run_experiment, write_results_csv};
use deeprls_core::signal::{derive_seed, generate, load_dataset, save_dataset, DatasetCollection};
use deeprls_core::{Error, ExperimentKind, ExperimentSpec, GeneratorConfig, Result, RlsState};

use crate::{EvalArgs, ExperimentArgs, GenArgs, RlsArgs, TrainArgs, TrainOpts};

pub fn gen(a: GenArgs) -> Result<()> {
    let cfg = GeneratorConfig {
        sources: a.sources,
        sensors: a.sensors.unwrap_or(a.sources + 2),
        len: a.len,
        num_train: a.train,
        num_test: a.test,
        noise_sigma: a.noise_sigma,
        master_seed: a.seed,
        center: a.center,
    };
    let data = generate(&cfg)?;
    save_dataset(&data, &a.out)?;
    println!(
        "wrote {} sequences (m={}, l={}, T={}) to {}",
        data.sequences.len(),
        cfg.sources,
        cfg.sensors,
        cfg.len,
        a.out.display()
    );
    Ok(())
}

fn load(path: &Path) -> Result<DatasetCollection> {
    let data = load_dataset(path)?;
    if data.is_empty() {
        return Err(Error::invalid(format!("{} contains no sequences", path.display())));
    }
    Ok(data)
}

fn write_metrics_csv(path: &Path, metrics: &[Metrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["sequence", "raw_mse", "aligned_mse"])?;
    for (i, m) in metrics.iter().enumerate() {
        w.write_record([i.to_string(), format_f64(m.raw_mse), format_f64(m.aligned_mse)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn rls(a: RlsArgs) -> Result<()> {
    let data = load(&a.data.data)?;
    let (_, test) = data.split(a.data.test)?;
    let init = RlsState::init(data.sensors(), data.sources(), a.beta, a.delta, a.seed)?;
    let metrics = test
        .iter()
        .map(|d| {
            let mut state = init.clone();
            let run = state.run(&d.observations, a.nonlinearity)?;
            sequence_metrics(&run.estimates, d.sources.samples())
        })
        .collect::<Result<Vec<_>>>()?;
    write_metrics_csv(&a.out, &metrics)?;
    let mean = Metrics::mean(&metrics);
    println!(
        "rls beta={} {} mse = {}",
        a.beta,
        a.metric,
        format_f64(a.metric.pick(&mean))
    );
    Ok(())
}

fn train_config(opts: &TrainOpts, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        learning_rate: opts.lr,
        lambda: opts.lambda,
        residual: opts.residual,
        seed,
        ..TrainConfig::default()
    }
}

fn history_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.history.csv"))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let data = load(&a.data.data)?;
    let depth = data.len();
    if let Some(layers) = a.layers {
        if layers != depth {
            return Err(Error::invalid(format!(
                "--layers {layers} does not match the dataset's sequence length {depth}"
            )));
        }
    }
    let (train_set, _) = data.split(a.data.test)?;
    let (l, m) = (data.sensors(), data.sources());
    let g = a.opts.nonlinearity;
    let model = if a.opts.tied_weights {
        DeepRlsModel::init_tied(l, m, depth, g, a.seed)?
    } else {
        DeepRlsModel::init(l, m, depth, g, a.seed)?
    };
    let cfg = train_config(&a.opts, derive_seed(a.seed, 2, 0));
    let (trained, history) = train_model(&model, train_set, &cfg)?;
    save_model(&trained, &a.out)?;

    let hist_path = a.history.unwrap_or_else(|| history_path(&a.out));
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&hist_path)?));
    w.write_record(["epoch", "mean_loss"])?;
    for (i, v) in history.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format_f64(*v)])?;
    }
    w.flush()?;
    println!(
        "trained {} epochs on {} sequences; checkpoint {}, history {}",
        history.len(),
        train_set.len(),
        a.out.display(),
        hist_path.display()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let data = load(&a.data.data)?;
    let model = load_model(&a.model)?;
    if model.sensors() != data.sensors() || model.sources() != data.sources() || model.depth() != data.len() {
        return Err(Error::invalid(format!(
            "model (l={}, m={}, T={}) does not match dataset (l={}, m={}, T={})",
            model.sensors(),
            model.sources(),
            model.depth(),
            data.sensors(),
            data.sources(),
            data.len()
        )));
    }
    let (_, test) = data.split(a.data.test)?;
    let metrics = evaluate_per_sequence(&model, test)?;
    write_metrics_csv(&a.out, &metrics)?;
    let mean = Metrics::mean(&metrics);
    println!("deep-rls {} mse = {}", a.metric, format_f64(a.metric.pick(&mean)));
    Ok(())
}

pub fn experiment(a: ExperimentArgs) -> Result<()> {
    let sweep = if a.sweep.is_empty() {
        match a.kind {
            ExperimentKind::Layers => vec![10, 20, 50, 100],
            ExperimentKind::Sources => vec![2, 3, 4, 5],
        }
    } else {
        a.sweep
    };
    let spec = ExperimentSpec {
        kind: a.kind,
        sweep,
        sources: a.sources,
        sensors: a.sensors,
        layers: a.layers,
        num_train: a.train,
        num_test: a.test,
        noise_sigma: a.noise_sigma,
        center: a.center,
        train: train_config(&a.opts, 0),
        nonlinearity: a.opts.nonlinearity,
        rls_beta: a.beta,
        rls_nonlinearity: a.rls_nonlinearity.unwrap_or(a.opts.nonlinearity),
        metric: a.metric,
        tied_weights: a.opts.tied_weights,
        seed: a.seed,
    };
    let rows = run_experiment(&spec)?;
    write_results_csv(&spec, &rows, BufWriter::new(File::create(&a.out)?), a.timing)?;
    for r in &rows {
        eprintln!(
            "{}={}: deep_rls {} mse {:.6}, rls {:.6} ({:.1}s)",
            spec.kind.name(),
            r.sweep_value,
            spec.metric,
            r.deep_rls_mse,
            r.rls_mse,
            r.wall_seconds
        );
    }
    Ok(())
}
