//! Finite-difference gradient checking.

use crate::array::Array;
use crate::error::Result;
use crate::tape::{Tape, Var};

/// Step used for central differences.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Gradient magnitudes below this are compared absolutely rather than
/// relatively, so round-off on near-zero derivatives does not dominate.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(leaf, flat index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: Vec<Array>,
    pub numeric: Vec<Array>,
    /// Kink margin of the tape at the unperturbed point.
    pub kink_margin: f64,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// Compare tape gradients of a scalar computation against central finite
/// differences, leaf by leaf.
///
/// `f` records the computation on a fresh tape given one `Var` per entry of
/// `leaves` and returns the single-element output.
pub fn grad_check<F>(f: F, leaves: &[Array], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Array]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;
    let analytic: Vec<Array> = vars
        .iter()
        .zip(leaves)
        .map(|(&v, leaf)| grads.take(v).unwrap_or_else(|| Array::zeros(leaf.shape())))
        .collect();

    let mut work: Vec<Array> = leaves.to_vec();
    let mut numeric = Vec::with_capacity(leaves.len());
    let mut max_rel_err = 0.0;
    let mut worst = (0, 0);
    for li in 0..leaves.len() {
        let mut num = Array::zeros(leaves[li].shape());
        for j in 0..leaves[li].len() {
            let base = leaves[li].data()[j];
            work[li].data_mut()[j] = base + step;
            let plus = eval(&work)?;
            work[li].data_mut()[j] = base - step;
            let minus = eval(&work)?;
            work[li].data_mut()[j] = base;
            let d = (plus - minus) / (2.0 * step);
            num.data_mut()[j] = d;
            let e = relative_error(analytic[li].data()[j], d);
            if e > max_rel_err {
                max_rel_err = e;
                worst = (li, j);
            }
        }
        numeric.push(num);
    }

    Ok(GradCheckReport {
        max_rel_err,
        worst,
        analytic,
        numeric,
        kink_margin: tape.kink_margin(),
    })
}
