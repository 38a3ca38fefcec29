//! Sweep experiments comparing trained Deep-RLS against the classical
//! recursion, written as CSV with one row per sweep value.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::deep::{evaluate, sequence_metrics, train, DeepRlsModel, Metrics, TrainConfig};
use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::rls::{check_beta, RlsState};
use crate::signal::{derive_seed, generate, GeneratorConfig, MixtureDataset};

const DOMAIN_POINT: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// MSE against the number of layers/iterations `T`.
    Layers,
    /// MSE against the number of sources `m`.
    Sources,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Layers => "fig1",
            ExperimentKind::Sources => "fig2",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" | "layers" => Ok(ExperimentKind::Layers),
            "fig2" | "sources" => Ok(ExperimentKind::Sources),
            other => Err(Error::invalid(format!("unknown experiment kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    Raw,
    #[default]
    Aligned,
}

impl Metric {
    pub fn pick(self, m: &Metrics) -> f64 {
        match self {
            Metric::Raw => m.raw_mse,
            Metric::Aligned => m.aligned_mse,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Raw => "raw",
            Metric::Aligned => "aligned",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Metric::Raw),
            "aligned" => Ok(Metric::Aligned),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Values of `T` (layers) or `m` (sources), strictly increasing.
    pub sweep: Vec<usize>,
    /// Source count when sweeping layers.
    pub sources: usize,
    /// Sensor count; `None` means `m + 2` at every sweep point.
    pub sensors: Option<usize>,
    /// Sequence length (= depth) when sweeping sources.
    pub layers: usize,
    pub num_train: usize,
    pub num_test: usize,
    pub noise_sigma: f64,
    pub center: bool,
    pub train: TrainConfig,
    pub nonlinearity: Nonlinearity,
    pub rls_beta: f64,
    pub rls_nonlinearity: Nonlinearity,
    pub metric: Metric,
    pub tied_weights: bool,
    pub seed: u64,
}

impl ExperimentSpec {
    /// Defaults for the given sweep: `m = 2`, `T = 20`, 10^3/10^2 sequences,
    /// tanh for both methods, baseline `beta = 0.99`, aligned metric.
    pub fn new(kind: ExperimentKind, sweep: Vec<usize>) -> Self {
        Self {
            kind,
            sweep,
            sources: 2,
            sensors: None,
            layers: 20,
            num_train: 1000,
            num_test: 100,
            noise_sigma: 0.0,
            center: false,
            train: TrainConfig::default(),
            nonlinearity: Nonlinearity::Tanh,
            rls_beta: 0.99,
            rls_nonlinearity: Nonlinearity::Tanh,
            metric: Metric::Aligned,
            tied_weights: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() {
            return Err(Error::invalid("sweep must contain at least one value"));
        }
        if self.sweep[0] == 0 || self.sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "sweep values must be strictly increasing positive integers",
            ));
        }
        if self.num_train == 0 || self.num_test == 0 {
            return Err(Error::invalid("train and test sets must be non-empty"));
        }
        check_beta(self.rls_beta)?;
        self.train.validate()?;
        for &v in &self.sweep {
            self.generator(v, 0).validate()?;
        }
        Ok(())
    }

    fn generator(&self, value: usize, seed: u64) -> GeneratorConfig {
        let (sources, len) = match self.kind {
            ExperimentKind::Layers => (self.sources, value),
            ExperimentKind::Sources => (value, self.layers),
        };
        GeneratorConfig {
            sources,
            sensors: self.sensors.unwrap_or(sources + 2),
            len,
            num_train: self.num_train,
            num_test: self.num_test,
            noise_sigma: self.noise_sigma,
            master_seed: seed,
            center: self.center,
        }
    }

    /// Seed of the sweep point with the given value; independent of the other sweep values.
    pub fn point_seed(&self, value: usize) -> u64 {
        derive_seed(self.seed, DOMAIN_POINT, value as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_value: usize,
    pub deep_rls_mse: f64,
    pub rls_mse: f64,
    pub wall_seconds: f64,
    pub seed: u64,
}

/// Mean RLS metrics over `tests`, every sequence starting from `(W0, P0)`.
pub fn evaluate_rls(
    w0: &nalgebra::DMatrix<f64>,
    p0: &nalgebra::DMatrix<f64>,
    beta: f64,
    g: Nonlinearity,
    tests: &[MixtureDataset],
) -> Result<Metrics> {
    if tests.is_empty() {
        return Err(Error::invalid("evaluation needs at least one test sequence"));
    }
    let per = tests
        .par_iter()
        .map(|d| {
            let mut state = RlsState::from_parts(w0.clone(), p0.clone(), beta)?;
            let run = state.run(&d.observations, g)?;
            sequence_metrics(&run.estimates, d.sources.samples())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics::mean(&per))
}

/// Runs one sweep point: generate, train, evaluate both methods.
pub fn run_point(spec: &ExperimentSpec, value: usize) -> Result<ResultRow> {
    let started = Instant::now();
    let seed = spec.point_seed(value);
    let gen = spec.generator(value, seed);
    let data = generate(&gen)?;
    let (train_set, test_set) = data.split(spec.num_test)?;

    let model_seed = derive_seed(seed, 1, 0);
    let model = if spec.tied_weights {
        DeepRlsModel::init_tied(gen.sensors, gen.sources, gen.len, spec.nonlinearity, model_seed)?
    } else {
        DeepRlsModel::init(gen.sensors, gen.sources, gen.len, spec.nonlinearity, model_seed)?
    };
    let train_cfg = TrainConfig {
        seed: derive_seed(seed, 2, 0),
        ..spec.train.clone()
    };
    let (trained, _) = train(&model, train_set, &train_cfg)?;
    let deep = evaluate(&trained, test_set)?;
    let rls = evaluate_rls(model.w0(), model.p0(), spec.rls_beta, spec.rls_nonlinearity, test_set)?;
    Ok(ResultRow {
        sweep_value: value,
        deep_rls_mse: spec.metric.pick(&deep),
        rls_mse: spec.metric.pick(&rls),
        wall_seconds: started.elapsed().as_secs_f64(),
        seed,
    })
}

/// Runs every sweep point in order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    spec.sweep
        .iter()
        .map(|&v| {
            run_point(spec, v).map_err(|e| match e {
                Error::InvalidArgument(msg) => Error::InvalidArgument(format!("sweep value {v}: {msg}")),
                Error::Numeric { step, what } => Error::Numeric {
                    step,
                    what: format!("sweep value {v}: {what}"),
                },
                other => other,
            })
        })
        .collect()
}

/// Formats a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub const RESULT_COLUMNS: [&str; 21] = [
    "kind",
    "sweep_value",
    "sources",
    "sensors",
    "layers",
    "train_sequences",
    "test_sequences",
    "noise_sigma",
    "center",
    "epochs",
    "batch_size",
    "learning_rate",
    "lambda",
    "residual",
    "nonlinearity",
    "rls_beta",
    "rls_nonlinearity",
    "metric",
    "tied_weights",
    "seed",
    "deep_rls_mse",
];

/// Writes one row per result. Every hyperparameter appears as a column, so
/// the file is self-describing. `wall_seconds` is appended only when
/// `include_timing` is set, since it varies between runs.
pub fn write_results_csv<W: Write>(
    spec: &ExperimentSpec,
    rows: &[ResultRow],
    out: W,
    include_timing: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = RESULT_COLUMNS.to_vec();
    header.push("rls_mse");
    if include_timing {
        header.push("wall_seconds");
    }
    w.write_record(&header)?;
    for row in rows {
        let gen = spec.generator(row.sweep_value, row.seed);
        let mut rec = vec![
            spec.kind.name().to_string(),
            row.sweep_value.to_string(),
            gen.sources.to_string(),
            gen.sensors.to_string(),
            gen.len.to_string(),
            spec.num_train.to_string(),
            spec.num_test.to_string(),
            format_f64(spec.noise_sigma),
            spec.center.to_string(),
            spec.train.epochs.to_string(),
            spec.train.batch_size.to_string(),
            format_f64(spec.train.learning_rate),
            format_f64(spec.train.lambda),
            spec.train.residual.to_string(),
            spec.nonlinearity.to_string(),
            format_f64(spec.rls_beta),
            spec.rls_nonlinearity.to_string(),
            spec.metric.to_string(),
            spec.tied_weights.to_string(),
            row.seed.to_string(),
            format_f64(row.deep_rls_mse),
            format_f64(row.rls_mse),
        ];
        if include_timing {
            rec.push(format_f64(row.wall_seconds));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ExperimentKind, sweep: Vec<usize>) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(kind, sweep);
        spec.num_train = 8;
        spec.num_test = 4;
        spec.layers = 5;
        spec.train.epochs = 2;
        spec.train.batch_size = 4;
        spec.seed = 7;
        spec
    }

    #[test]
    fn sweep_validation() {
        assert!(tiny(ExperimentKind::Layers, vec![]).validate().is_err());
        assert!(tiny(ExperimentKind::Layers, vec![5, 5]).validate().is_err());
        assert!(tiny(ExperimentKind::Layers, vec![0, 5]).validate().is_err());
        let mut spec = tiny(ExperimentKind::Sources, vec![2, 3]);
        spec.sensors = Some(2);
        assert!(spec.validate().is_err());
        assert!(tiny(ExperimentKind::Sources, vec![2, 3]).validate().is_ok());
    }

    #[test]
    fn csv_is_deterministic_and_parseable() {
        let spec = tiny(ExperimentKind::Layers, vec![3, 6]);
        let render = || {
            let rows = run_experiment(&spec).unwrap();
            let mut buf = Vec::new();
            write_results_csv(&spec, &rows, &mut buf, false).unwrap();
            buf
        };
        let a = render();
        assert_eq!(a, render());
        let mut reader = csv::Reader::from_reader(a.as_slice());
        let headers = reader.headers().unwrap().clone();
        assert_eq!(headers.len(), 22);
        let recs: Vec<_> = reader.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(&recs[1][1], "6");
        let mse: f64 = recs[0][20].parse().unwrap();
        assert!(mse.is_finite() && mse >= 0.0);
    }

    #[test]
    fn point_seed_depends_only_on_value() {
        let a = tiny(ExperimentKind::Layers, vec![3, 6]);
        let b = tiny(ExperimentKind::Layers, vec![6]);
        assert_eq!(a.point_seed(6), b.point_seed(6));
        assert_ne!(a.point_seed(3), a.point_seed(6));
    }

    #[test]
    fn float_format_has_17_significant_digits() {
        assert_eq!(format_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(format_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
