//! Central finite-difference checks of tape gradients.
//!
//! The analytic gradient comes from a relaxed tape (smooth spike steps,
//! fresh efficient masks). Each perturbed loss is evaluated on a relaxed tape
//! that replays those masks straight-through, so for non-smooth primitives
//! the check compares against the surrogate loss the backward rules
//! differentiate.

use crate::error::{Error, Result};
use crate::layer::Parameters;
use crate::linalg::Matrix;
use crate::tape::{FrozenMask, Tape, Var};

/// Norms below this are treated as this value when forming relative errors,
/// so vanishing gradients are compared in absolute terms.
pub const NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, NORM_FLOOR)`
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.relative_error)
            .fold(0.0, f64::max)
    }

    pub fn worst_param(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

fn norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(NORM_FLOOR)
}

fn loss_value(tape: &Tape, loss: Var) -> Result<f64> {
    let v = tape.value(loss);
    if v.shape() != (1, 1) {
        return Err(Error::InvalidState("loss must be a scalar".into()));
    }
    Ok(v[(0, 0)])
}

/// Compares the tape gradient of `record`'s loss with central differences of
/// step `step` for every parameter of `params`.
pub fn check_gradients<P, F>(params: &P, step: f64, record: F) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: Fn(&P, &mut Tape) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut base = Tape::relaxed(None);
    let loss = record(params, &mut base)?;
    let grads = base.backward(loss)?;
    let masks: Vec<FrozenMask> = base.recorded_masks().to_vec();
    drop(base);

    let eval = |p: &P| -> Result<f64> {
        let mut tape = Tape::relaxed(Some(masks.clone()));
        let loss = record(p, &mut tape)?;
        loss_value(&tape, loss)
    };

    let mut shapes: Vec<(String, (usize, usize))> = Vec::new();
    params.visit_params(&mut |name, m| shapes.push((name.to_string(), m.shape())));

    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    for (name, (rows, cols)) in shapes {
        let len = rows * cols;
        let mut numeric = vec![0.0; len];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let original = read_entry(&work, &name, i);
            write_entry(&mut work, &name, i, original + step);
            let plus = eval(&work)?;
            write_entry(&mut work, &name, i, original - step);
            let minus = eval(&work)?;
            write_entry(&mut work, &name, i, original);
            *slot = (plus - minus) / (2.0 * step);
        }
        let analytic = grads
            .get(&name)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(rows, cols));
        report.params.push(ParamCheck {
            relative_error: relative_error(analytic.as_slice(), &numeric),
            analytic_norm: norm(analytic.as_slice()),
            numeric_norm: norm(&numeric),
            name,
        });
    }
    Ok(report)
}

fn read_entry<P: Parameters>(p: &P, name: &str, i: usize) -> f64 {
    let mut out = f64::NAN;
    p.visit_params(&mut |n, m| {
        if n == name {
            out = m.as_slice()[i];
        }
    });
    out
}

fn write_entry<P: Parameters>(p: &mut P, name: &str, i: usize, value: f64) {
    p.visit_params_mut(&mut |n, m| {
        if n == name {
            m.as_mut_slice()[i] = value;
        }
    });
}
