//! Recursive-least-squares subspace tracking and its nonlinear-PCA variant.
//!
//! Throughout, the separating matrix `W` is `l x m` and source estimates are
//! `y = g(W^T x)`. `P` tracks the inverse of the exponentially weighted
//! autocorrelation of `y` via rank-one (Sherman-Morrison) updates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
pub use crate::nonlinearity::Nonlinearity;

/// Default `delta` in `P(0) = delta^-1 I`.
pub const DEFAULT_DELTA: f64 = 0.01;

/// Condition number above which the autocorrelation is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!(
            "forgetting factor must lie in (0, 1], got {beta}"
        )));
    }
    Ok(())
}

/// `l x m` matrix with orthonormal columns from the QR factor of a seeded Gaussian draw.
pub fn orthonormal_init(l: usize, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    if m == 0 || l < m {
        return Err(Error::invalid(format!("need l >= m >= 1, got l={l}, m={m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let g = DMatrix::from_fn(l, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = g.qr();
        if qr.r().diagonal().iter().all(|d| d.abs() > 1e-8) {
            return Ok(qr.q());
        }
    }
}

fn all_finite<'a>(vals: impl IntoIterator<Item = &'a f64>) -> bool {
    vals.into_iter().all(|v| v.is_finite())
}

/// Mutable state of one RLS tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    w: DMatrix<f64>,
    p: DMatrix<f64>,
    beta: f64,
    t: usize,
    delta: f64,
}

impl RlsState {
    /// `W(0)` orthonormalized Gaussian, `P(0) = delta^-1 I`, `t = 0`.
    pub fn init(l: usize, m: usize, beta: f64, delta: f64, seed: u64) -> Result<Self> {
        check_beta(beta)?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("delta must be positive, got {delta}")));
        }
        Ok(Self {
            w: orthonormal_init(l, m, seed)?,
            p: DMatrix::identity(m, m) / delta,
            beta,
            t: 0,
            delta,
        })
    }

    /// Starts from explicit `W(0)` and `P(0)`.
    pub fn from_parts(w: DMatrix<f64>, p: DMatrix<f64>, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        let m = w.ncols();
        if m == 0 || w.nrows() < m || p.shape() != (m, m) {
            return Err(Error::invalid(format!(
                "incompatible W {:?} and P {:?}",
                w.shape(),
                p.shape()
            )));
        }
        Ok(Self {
            w,
            p,
            beta,
            t: 0,
            delta: f64::NAN,
        })
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> usize {
        self.t
    }

    /// Initialization scale, NaN when built with [`RlsState::from_parts`].
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn sensors(&self) -> usize {
        self.w.nrows()
    }

    pub fn sources(&self) -> usize {
        self.w.ncols()
    }

    /// One update on sample `x`; returns the source estimate `y(t)`.
    pub fn step(&mut self, x: &DVector<f64>, g: Nonlinearity) -> Result<DVector<f64>> {
        Ok(self.step_detailed(x, g)?.0)
    }

    /// Like [`RlsState::step`], also returning the prediction error `e(t)`.
    fn step_detailed(&mut self, x: &DVector<f64>, g: Nonlinearity) -> Result<(DVector<f64>, DVector<f64>)> {
        let step = self.t + 1;
        if x.len() != self.sensors() {
            return Err(Error::invalid(format!(
                "sample has length {}, expected {}",
                x.len(),
                self.sensors()
            )));
        }
        if !all_finite(x.iter()) {
            return Err(Error::numeric(step, "non-finite input sample"));
        }
        let y = (self.w.tr_mul(x)).map(|v| g.apply(v));
        let h = &self.p * &y;
        let denom = self.beta + y.dot(&h);
        if !(denom.is_finite() && denom != 0.0) {
            return Err(Error::numeric(step, format!("gain denominator is {denom}")));
        }
        let f = &h / denom;
        let p = (&self.p - &f * h.transpose()) / self.beta;
        let p = (&p + p.transpose()) * 0.5;
        let e = x - &self.w * &y;
        let w = &self.w + &e * f.transpose();
        if !all_finite(p.iter()) || !all_finite(w.iter()) {
            return Err(Error::numeric(step, "non-finite state after update"));
        }
        if p.diagonal().iter().any(|&d| d <= 0.0) {
            return Err(Error::numeric(step, "P lost positive definiteness"));
        }
        self.p = p;
        self.w = w;
        self.t = step;
        Ok((y, e))
    }

    /// Applies [`RlsState::step`] to every column of `x` in order.
    pub fn run(&mut self, x: &DMatrix<f64>, g: Nonlinearity) -> Result<RlsRun> {
        if x.nrows() != self.sensors() {
            return Err(Error::invalid(format!(
                "observations have {} rows, expected {}",
                x.nrows(),
                self.sensors()
            )));
        }
        let len = x.ncols();
        let mut estimates = DMatrix::zeros(self.sources(), len);
        let mut reconstruction_error = Vec::with_capacity(len);
        for (t, col) in x.column_iter().enumerate() {
            let (y, e) = self.step_detailed(&col.clone_owned(), g)?;
            estimates.set_column(t, &y);
            reconstruction_error.push(e.norm());
        }
        Ok(RlsRun {
            estimates,
            reconstruction_error,
        })
    }
}

/// Output of [`RlsState::run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RlsRun {
    /// `m x T`; column `t` is `y(t)`.
    pub estimates: DMatrix<f64>,
    /// `||x(t) - W(t-1) y(t)||` per step.
    pub reconstruction_error: Vec<f64>,
}

/// Convenience wrapper: runs `state` over `x`, returning the final state and the run record.
pub fn run_sequence(mut state: RlsState, x: &DMatrix<f64>, g: Nonlinearity) -> Result<(RlsState, RlsRun)> {
    let run = state.run(x, g)?;
    Ok((state, run))
}

/// Exponentially weighted second-order statistics of `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationAccumulators {
    /// `m x m`, `sum beta^(T-i) y(i) y(i)^T`.
    pub cy: DMatrix<f64>,
    /// `l x m`, `sum beta^(T-i) x(i) y(i)^T`.
    pub cxy: DMatrix<f64>,
    pub beta: f64,
}

impl CorrelationAccumulators {
    pub fn new(l: usize, m: usize, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self {
            cy: DMatrix::zeros(m, m),
            cxy: DMatrix::zeros(l, m),
            beta,
        })
    }

    pub fn update(&mut self, x: &DVector<f64>, y: &DVector<f64>) {
        self.cy = &self.cy * self.beta + y * y.transpose();
        self.cxy = &self.cxy * self.beta + x * y.transpose();
    }
}

fn check_pair(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::invalid(format!(
            "X has {} columns but Y has {}",
            x.ncols(),
            y.ncols()
        )));
    }
    Ok(())
}

pub fn weighted_correlations(x: &DMatrix<f64>, y: &DMatrix<f64>, beta: f64) -> Result<CorrelationAccumulators> {
    check_pair(x, y)?;
    let mut acc = CorrelationAccumulators::new(x.nrows(), y.nrows(), beta)?;
    for (xc, yc) in x.column_iter().zip(y.column_iter()) {
        acc.update(&xc.clone_owned(), &yc.clone_owned());
    }
    Ok(acc)
}

/// Stationary point of the weighted loss: `W = Cxy Cy^-1` (so that `W^T = Cy^-1 Cxy^T`).
pub fn closed_form_separator(acc: &CorrelationAccumulators) -> Result<DMatrix<f64>> {
    let sv = acc.cy.singular_values();
    let (max, min) = (sv.max(), sv.min());
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition.is_nan() || condition > CONDITION_LIMIT {
        return Err(Error::Singular { condition });
    }
    let z = acc
        .cy
        .clone()
        .lu()
        .solve(&acc.cxy.transpose())
        .ok_or(Error::Singular { condition })?;
    Ok(z.transpose())
}

/// Gradient of the weighted loss with `y` held fixed: `-2 Cxy + 2 W Cy`.
pub fn loss_gradient(w: &DMatrix<f64>, acc: &CorrelationAccumulators) -> Result<DMatrix<f64>> {
    if w.shape() != acc.cxy.shape() {
        return Err(Error::invalid(format!(
            "W is {:?} but Cxy is {:?}",
            w.shape(),
            acc.cxy.shape()
        )));
    }
    Ok(&acc.cxy * -2.0 + w * &acc.cy * 2.0)
}

/// `sum_i beta^(T-i) ||x(i) - W y(i)||^2`.
pub fn weighted_loss(w: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>, beta: f64) -> Result<f64> {
    check_pair(x, y)?;
    check_beta(beta)?;
    if w.shape() != (x.nrows(), y.nrows()) {
        return Err(Error::invalid("W does not map y-space into x-space"));
    }
    let len = x.ncols();
    let residual = x - w * y;
    Ok(residual
        .column_iter()
        .enumerate()
        .map(|(i, r)| beta.powi((len - 1 - i) as i32) * r.norm_squared())
        .sum())
}
