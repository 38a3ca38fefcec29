use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::DeepRlsModel;
use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};

/// Per-layer snapshots from one forward pass (index `k` is layer `k + 1`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerTrace {
    pub y: Vec<DVector<f64>>,
    pub h: Vec<DVector<f64>>,
    pub f: Vec<DVector<f64>>,
    pub e: Vec<DVector<f64>>,
    /// `W(k)` after the layer's update.
    pub w: Vec<DMatrix<f64>>,
    /// `P(k)` after the layer's update.
    pub p: Vec<DMatrix<f64>>,
}

impl LayerTrace {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Which residual the reconstruction term of the loss measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Residual {
    /// `x(k) - W(k) y(k)` with the post-update `W(k)`.
    #[default]
    Updated,
    /// `e(k) = x(k) - H_k W(k-1) y(k)`, the error before the update.
    Prior,
}

impl fmt::Display for Residual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Residual::Updated => "updated",
            Residual::Prior => "prior",
        })
    }
}

impl FromStr for Residual {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "updated" => Ok(Residual::Updated),
            "prior" => Ok(Residual::Prior),
            other => Err(Error::invalid(format!("unknown residual `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
struct ParamNodes {
    h: NodeId,
    b: NodeId,
    omega: NodeId,
}

/// Result of [`forward`]. Node handles refer to the tape the pass was recorded on.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `m x T`; column `k` is `y(k + 1)`.
    pub estimates: DMatrix<f64>,
    pub trace: LayerTrace,
    /// `||x(k) - W(k) y(k)||^2` per layer.
    pub reconstruction: Vec<f64>,
    /// `||e(k)||^2` per layer.
    pub prior_error: Vec<f64>,
    /// `omega_k` per layer (repeated in tied mode).
    pub omegas: Vec<f64>,
    params: Vec<ParamNodes>,
    reconstruction_nodes: Vec<NodeId>,
    prior_nodes: Vec<NodeId>,
}

impl ForwardOutput {
    fn residuals(&self, residual: Residual) -> &[f64] {
        match residual {
            Residual::Updated => &self.reconstruction,
            Residual::Prior => &self.prior_error,
        }
    }
}

fn check_finite(m: &DMatrix<f64>, layer: usize, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(layer, format!("non-finite {what}")))
    }
}

fn column(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Runs the unfolded recursion over the columns of `x` (`l x T`, `T` = depth).
///
/// Per layer, with `Wh = W(k-1) H_k^T` (so `Wh^T = H_k W(k-1)^T`):
/// `y = g(Wh^T x + b)`, `h = P y`, `f = h / (omega + y.h)`,
/// `P = sym((P - f h^T) / omega)`, `e = x - Wh y`, `W = Wh + e f^T`.
///
/// Every operation is recorded on `tape` when one is supplied.
pub fn forward(model: &DeepRlsModel, x: &DMatrix<f64>, tape: Option<&mut Tape>) -> Result<ForwardOutput> {
    let mut local = Tape::new();
    let tape = tape.unwrap_or(&mut local);
    record_forward(model, x, tape)
}

fn record_forward(model: &DeepRlsModel, x: &DMatrix<f64>, tape: &mut Tape) -> Result<ForwardOutput> {
    let (l, m, depth) = (model.sensors(), model.sources(), model.depth());
    if x.shape() != (l, depth) {
        return Err(Error::invalid(format!(
            "observations are {:?}, model expects {l} x {depth}",
            x.shape()
        )));
    }
    let g = model.nonlinearity();
    let params: Vec<ParamNodes> = model
        .parameter_sets()
        .iter()
        .map(|p| ParamNodes {
            h: tape.input(p.h.clone()),
            b: tape.input(DMatrix::from_column_slice(m, 1, p.b.as_slice())),
            omega: tape.input(DMatrix::from_element(1, 1, p.omega)),
        })
        .collect();

    let mut w = tape.constant(model.w0().clone());
    let mut p = tape.constant(model.p0().clone());
    let mut trace = LayerTrace::default();
    let mut estimates = DMatrix::zeros(m, depth);
    let mut reconstruction = Vec::with_capacity(depth);
    let mut reconstruction_nodes = Vec::with_capacity(depth);
    let mut prior_error = Vec::with_capacity(depth);
    let mut prior_nodes = Vec::with_capacity(depth);
    let mut omegas = Vec::with_capacity(depth);

    for k in 0..depth {
        let layer = k + 1;
        let pn = &params[if params.len() == 1 { 0 } else { k }];
        let xk = tape.constant(x.columns(k, 1).into_owned());

        // y(k) = g(H W^T x + b)
        let ht = tape.transpose(pn.h)?;
        let wh = tape.matmul(w, ht)?;
        let wht = tape.transpose(wh)?;
        let proj = tape.matmul(wht, xk)?;
        let pre = tape.add(proj, pn.b)?;
        let y = tape.activation(pre, g)?;

        // gain and inverse-correlation update
        let h = tape.matmul(p, y)?;
        let yh = tape.dot(y, h)?;
        let denom = tape.add(pn.omega, yh)?;
        let f = tape.scalar_divide(h, denom)?;
        let fh = tape.outer(f, h)?;
        let pd = tape.sub(p, fh)?;
        let pn_next = tape.scalar_divide(pd, pn.omega)?;
        let pt = tape.transpose(pn_next)?;
        let psum = tape.add(pn_next, pt)?;
        let p_next = tape.scale(psum, 0.5)?;

        // separating-matrix update
        let why = tape.matmul(wh, y)?;
        let e = tape.sub(xk, why)?;
        let ef = tape.outer(e, f)?;
        let w_next = tape.add(wh, ef)?;

        // ||x(k) - W(k) y(k)||^2 with the post-update W(k)
        let wy = tape.matmul(w_next, y)?;
        let r = tape.sub(xk, wy)?;
        let rn = tape.squared_norm(r)?;
        let en = tape.squared_norm(e)?;

        let p_val = tape.value(p_next)?;
        let w_val = tape.value(w_next)?;
        check_finite(p_val, layer, "P")?;
        check_finite(w_val, layer, "W")?;
        let y_val = column(tape.value(y)?);
        check_finite(tape.value(y)?, layer, "y")?;

        estimates.set_column(k, &y_val);
        trace.y.push(y_val);
        trace.h.push(column(tape.value(h)?));
        trace.f.push(column(tape.value(f)?));
        trace.e.push(column(tape.value(e)?));
        trace.w.push(w_val.clone());
        trace.p.push(p_val.clone());
        reconstruction.push(tape.scalar(rn)?);
        reconstruction_nodes.push(rn);
        prior_error.push(tape.scalar(en)?);
        prior_nodes.push(en);
        omegas.push(tape.scalar(pn.omega)?);

        w = w_next;
        p = p_next;
    }

    Ok(ForwardOutput {
        estimates,
        trace,
        reconstruction,
        prior_error,
        omegas,
        params,
        reconstruction_nodes,
        prior_nodes,
    })
}

/// `ReLU(-omega) + ReLU(omega - 1)`: zero exactly on `[0, 1]`.
pub fn penalty(omega: f64) -> f64 {
    (-omega).max(0.0) + (omega - 1.0).max(0.0)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Accumulated reconstruction loss of all layers plus `lambda` times the
/// forgetting-parameter penalty of every layer.
pub fn loss(output: &ForwardOutput, lambda: f64) -> Result<f64> {
    loss_with(output, lambda, Residual::Updated)
}

/// [`loss`] with a selectable reconstruction residual.
pub fn loss_with(output: &ForwardOutput, lambda: f64, residual: Residual) -> Result<f64> {
    check_lambda(lambda)?;
    let recon: f64 = output.residuals(residual).iter().sum();
    let pen: f64 = output.omegas.iter().map(|&w| penalty(w)).sum();
    Ok(recon + lambda * pen)
}

/// Loss value and its gradient with respect to [`DeepRlsModel::to_flat`].
pub fn loss_and_gradients(
    model: &DeepRlsModel,
    x: &DMatrix<f64>,
    lambda: f64,
    residual: Residual,
) -> Result<(f64, Vec<f64>)> {
    check_lambda(lambda)?;
    let mut tape = Tape::new();
    let out = record_forward(model, x, &mut tape)?;
    let total = record_loss(&mut tape, model, &out, lambda, residual)?;
    let value = tape.scalar(total)?;
    tape.backward(total)?;

    let m = model.sources();
    let mut grads = Vec::with_capacity(model.param_count());
    for pn in &out.params {
        let gh = tape.grad(pn.h).expect("input gradient");
        for r in 0..m {
            for c in 0..m {
                grads.push(gh[(r, c)]);
            }
        }
        grads.extend(tape.grad(pn.b).expect("input gradient").iter());
        grads.push(tape.grad(pn.omega).expect("input gradient")[(0, 0)]);
    }
    Ok((value, grads))
}

fn record_loss(
    tape: &mut Tape,
    model: &DeepRlsModel,
    out: &ForwardOutput,
    lambda: f64,
    residual: Residual,
) -> Result<NodeId> {
    let terms = match residual {
        Residual::Updated => &out.reconstruction_nodes,
        Residual::Prior => &out.prior_nodes,
    };
    let mut total = terms[0];
    for &rn in &terms[1..] {
        total = tape.add(total, rn)?;
    }
    if lambda > 0.0 {
        let one = tape.constant(DMatrix::from_element(1, 1, 1.0));
        for k in 0..model.depth() {
            let omega = out.params[if out.params.len() == 1 { 0 } else { k }].omega;
            let neg = tape.scale(omega, -1.0)?;
            let below = tape.relu(neg)?;
            let shifted = tape.sub(omega, one)?;
            let above = tape.relu(shifted)?;
            let both = tape.add(below, above)?;
            let weighted = tape.scale(both, lambda)?;
            total = tape.add(total, weighted)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deep::LayerParams;
    use crate::nonlinearity::Nonlinearity;
    use crate::rls::{run_sequence, RlsState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn identity_model(l: usize, m: usize, depth: usize, beta: f64, g: Nonlinearity) -> DeepRlsModel {
        let base = DeepRlsModel::init(l, m, depth, g, 17).unwrap();
        DeepRlsModel::from_parts(
            vec![LayerParams::identity(m, beta); depth],
            depth,
            base.w0().clone(),
            base.p0().clone(),
            g,
        )
        .unwrap()
    }

    #[test]
    fn identity_parameters_reproduce_rls() {
        for g in Nonlinearity::ALL {
            let model = identity_model(4, 2, 60, 0.99, g);
            let x = gaussian(4, 60, 5);
            let out = forward(&model, &x, None).unwrap();
            let state = RlsState::from_parts(model.w0().clone(), model.p0().clone(), 0.99).unwrap();
            let mut stepper = state.clone();
            let (_, run) = run_sequence(state, &x, g).unwrap();
            assert!((&out.estimates - &run.estimates).amax() < 1e-12);
            for k in 0..60 {
                stepper.step(&x.column(k).into_owned(), g).unwrap();
                assert!((&out.trace.w[k] - stepper.w()).amax() < 1e-12);
                assert!((&out.trace.p[k] - stepper.p()).amax() < 1e-12);
                assert!((out.trace.e[k].norm() - run.reconstruction_error[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_input_with_zero_bias_gives_zero_output() {
        let model = DeepRlsModel::init(3, 2, 5, Nonlinearity::Tanh, 2).unwrap();
        let out = forward(&model, &DMatrix::zeros(3, 5), None).unwrap();
        assert_eq!(out.estimates, DMatrix::zeros(2, 5));
    }

    #[test]
    fn zero_input_outputs_activated_bias() {
        let mut model = DeepRlsModel::init(3, 2, 3, Nonlinearity::Tanh, 2).unwrap();
        for (i, p) in model.parameter_sets_mut().iter_mut().enumerate() {
            p.b = DVector::from_vec(vec![0.3 * i as f64, -0.2]);
        }
        let out = forward(&model, &DMatrix::zeros(3, 3), None).unwrap();
        for k in 0..3 {
            let want = model.layer(k).b.map(f64::tanh);
            assert!((&out.trace.y[k] - want).amax() < 1e-15);
        }
    }

    #[test]
    fn reconstruction_matches_trace_reevaluation() {
        let model = DeepRlsModel::init(3, 2, 4, Nonlinearity::Tanh, 8).unwrap();
        let x = gaussian(3, 4, 9);
        let out = forward(&model, &x, None).unwrap();
        let oracle: f64 = (0..4)
            .map(|k| (x.column(k) - &out.trace.w[k] * &out.trace.y[k]).norm_squared())
            .sum();
        let got = loss(&out, 0.0).unwrap();
        assert!((got - oracle).abs() / oracle < 1e-12);
    }

    #[test]
    fn depth_mismatch_rejected() {
        let model = DeepRlsModel::init(3, 2, 4, Nonlinearity::Tanh, 8).unwrap();
        assert!(matches!(
            forward(&model, &gaussian(3, 5, 1), None),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            forward(&model, &gaussian(2, 4, 1), None),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn non_finite_input_reports_layer() {
        let model = DeepRlsModel::init(3, 2, 4, Nonlinearity::Tanh, 8).unwrap();
        let mut x = gaussian(3, 4, 1);
        x[(0, 2)] = f64::INFINITY;
        let err = forward(&model, &x, None).unwrap_err();
        assert!(matches!(err, Error::Numeric { step: 3, .. }), "{err}");
    }

    #[test]
    fn penalty_values() {
        let mut model = DeepRlsModel::init(3, 2, 3, Nonlinearity::Tanh, 8).unwrap();
        let x = gaussian(3, 3, 1);
        let base = loss(&forward(&model, &x, None).unwrap(), 0.0).unwrap();
        let out = forward(&model, &x, None).unwrap();
        assert_eq!(loss(&out, 5.0).unwrap(), base);

        model.parameter_sets_mut()[0].omega = -0.5;
        let out = forward(&model, &x, None).unwrap();
        let recon = loss(&out, 0.0).unwrap();
        assert!((loss(&out, 1.0).unwrap() - recon - 0.5).abs() < 1e-12);

        model.parameter_sets_mut()[0].omega = 1.2;
        let out = forward(&model, &x, None).unwrap();
        let recon = loss(&out, 0.0).unwrap();
        assert!((loss(&out, 2.0).unwrap() - recon - 0.4).abs() < 1e-12);
        assert!(matches!(loss(&out, -1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn tape_loss_equals_value_loss() {
        let mut model = DeepRlsModel::init(3, 2, 4, Nonlinearity::Tanh, 8).unwrap();
        model.parameter_sets_mut()[1].omega = 1.1;
        let x = gaussian(3, 4, 2);
        let out = forward(&model, &x, None).unwrap();
        for residual in [Residual::Updated, Residual::Prior] {
            let (v, grads) = loss_and_gradients(&model, &x, 3.0, residual).unwrap();
            let direct = loss_with(&out, 3.0, residual).unwrap();
            assert!((v - direct).abs() < 1e-12 * direct.max(1.0));
            assert_eq!(grads.len(), model.param_count());
        }
        let prior: f64 = out.trace.e.iter().map(|e| e.norm_squared()).sum();
        assert!((loss_with(&out, 0.0, Residual::Prior).unwrap() - prior).abs() < 1e-12 * prior);
    }

    #[test]
    fn node_count_is_linear_in_depth() {
        let counts: Vec<usize> = [1, 2, 3, 7]
            .iter()
            .map(|&d| {
                let model = DeepRlsModel::init(4, 2, d, Nonlinearity::Tanh, 1).unwrap();
                let mut tape = Tape::new();
                forward(&model, &gaussian(4, d, 3), Some(&mut tape)).unwrap();
                tape.len()
            })
            .collect();
        let per_layer = counts[1] - counts[0];
        let offset = counts[0] - per_layer;
        for (d, c) in [1, 2, 3, 7].iter().zip(&counts) {
            assert_eq!(*c, per_layer * d + offset);
        }
    }
}
