use itertools::Itertools;
use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{forward, DeepRlsModel};
use crate::error::{Error, Result};
use crate::signal::MixtureDataset;

/// Largest source count for which the signed-permutation search is run.
pub const MAX_ALIGNED_SOURCES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    /// `(1/T) sum_k ||s(k) - y(k)||^2`.
    pub raw_mse: f64,
    /// Same after the best signed permutation of the rows of `y`.
    pub aligned_mse: f64,
}

impl Metrics {
    pub fn mean(items: &[Metrics]) -> Metrics {
        let n = items.len() as f64;
        Metrics {
            raw_mse: items.iter().map(|m| m.raw_mse).sum::<f64>() / n,
            aligned_mse: items.iter().map(|m| m.aligned_mse).sum::<f64>() / n,
        }
    }
}

/// Metrics of estimates `y` against ground truth `s`, both `m x T`.
pub fn sequence_metrics(y: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<Metrics> {
    if y.shape() != s.shape() || y.ncols() == 0 {
        return Err(Error::invalid(format!(
            "estimates {:?} do not match sources {:?}",
            y.shape(),
            s.shape()
        )));
    }
    let m = s.nrows();
    if m > MAX_ALIGNED_SOURCES {
        return Err(Error::invalid(format!(
            "aligned MSE supports at most {MAX_ALIGNED_SOURCES} sources, got {m}"
        )));
    }
    let len = s.ncols() as f64;
    let raw = (s - y).norm_squared() / len;

    // cost[i][j]: best-signed squared error of output row i against source j.
    // Signs decouple per matched pair, so the signed-permutation optimum is
    // the permutation optimum over these costs.
    let mut cost = vec![vec![0.0; m]; m];
    for (i, row) in cost.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            let (mut plus, mut minus) = (0.0, 0.0);
            for t in 0..s.ncols() {
                let (sv, yv) = (s[(j, t)], y[(i, t)]);
                plus += (sv - yv) * (sv - yv);
                minus += (sv + yv) * (sv + yv);
            }
            *c = f64::min(plus, minus);
        }
    }
    let best = (0..m)
        .permutations(m)
        .map(|perm| perm.iter().enumerate().map(|(j, &i)| cost[i][j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    Ok(Metrics {
        raw_mse: raw,
        aligned_mse: best / len,
    })
}

pub fn evaluate_per_sequence(model: &DeepRlsModel, tests: &[MixtureDataset]) -> Result<Vec<Metrics>> {
    tests
        .par_iter()
        .map(|d| {
            let out = forward(model, &d.observations, None)?;
            sequence_metrics(&out.estimates, d.sources.samples())
        })
        .collect()
}

/// Mean metrics over `tests`.
pub fn evaluate(model: &DeepRlsModel, tests: &[MixtureDataset]) -> Result<Metrics> {
    if tests.is_empty() {
        return Err(Error::invalid("evaluation needs at least one test sequence"));
    }
    Ok(Metrics::mean(&evaluate_per_sequence(model, tests)?))
}
