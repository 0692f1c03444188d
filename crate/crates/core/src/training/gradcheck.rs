use super::tape_mse;
use crate::model::{to_rows, DpwModel, ModelError};
use crate::tensor::Tape;
use ndarray::ArrayView3;
use serde::Serialize;

/// Outcome of comparing backprop against central differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// Largest `|a − n| / max(|a|, |n|, 1e-8)` over all checked entries.
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
    pub step: f64,
    pub tol: f64,
    pub passed: bool,
}

fn batch_loss(model: &DpwModel, inputs: ArrayView3<f64>, target: &[f64]) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let pass = model.forward_tape(&mut tape, inputs, false)?;
    let shape = tape.shape(pass.prediction).to_vec();
    let t = tape.constant(shape, target.to_vec())?;
    let l = tape_mse(&mut tape, pass.prediction, t)?;
    Ok(tape.value(l)[0])
}

/// Checks the MSE gradient of every trainable parameter entry on one batch
/// (`inputs [B, L, C]`, `targets [B, T, C]`) against central differences.
pub fn grad_check(
    model: &DpwModel,
    inputs: ArrayView3<f64>,
    targets: ArrayView3<f64>,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport, ModelError> {
    let target = to_rows(targets);
    let mut tape = Tape::new();
    let pass = model.forward_tape(&mut tape, inputs, true)?;
    let shape = tape.shape(pass.prediction).to_vec();
    let t = tape.constant(shape, target.clone())?;
    let l = tape_mse(&mut tape, pass.prediction, t)?;
    tape.backward(l)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        n_checked: 0,
        step,
        tol,
        passed: true,
    };
    let mut probe = model.clone();
    for (k, (name, group, v)) in pass.params.vars.iter().enumerate() {
        if !group.trainable(&model.config) {
            continue;
        }
        let analytic = tape.grad(*v).expect("trainable leaf has a gradient");
        for (i, &a) in analytic.iter().enumerate() {
            let orig = model.named_params()[k].tensor.data()[i];
            probe.named_params_mut()[k].tensor.data_mut()[i] = orig + step;
            let plus = batch_loss(&probe, inputs, &target)?;
            probe.named_params_mut()[k].tensor.data_mut()[i] = orig - step;
            let minus = batch_loss(&probe, inputs, &target)?;
            probe.named_params_mut()[k].tensor.data_mut()[i] = orig;
            let n = (plus - minus) / (2.0 * step);
            let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            report.n_checked += 1;
            if err > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = err;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    report.passed = report.max_rel_err <= tol;
    Ok(report)
}
