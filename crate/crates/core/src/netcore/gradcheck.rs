use super::{ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Magnitude below which relative error is measured against this floor instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub checked: usize,
}

/// Compares tape gradients of a scalar loss against central differences with step `h`.
pub fn check_gradients<F>(store: &mut ParamStore, h: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let scalar = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = loss(store, &mut tape)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::Shape(format!("loss has shape {:?}", v.shape())));
        }
        Ok(v.data()[0])
    };
    let analytic = {
        let mut tape = Tape::new();
        let out = loss(store, &mut tape)?;
        let seed = Tensor::full(tape.value(out).shape(), 1.0);
        tape.backward(out, &seed)?.for_store(store)?
    };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (String::new(), 0),
        checked: 0,
    };
    for p in 0..store.len() {
        for k in 0..store.values()[p].len() {
            let orig = store.values()[p].data()[k];
            store.values_mut()[p].data_mut()[k] = orig + h;
            let up = scalar(store)?;
            store.values_mut()[p].data_mut()[k] = orig - h;
            let down = scalar(store)?;
            store.values_mut()[p].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic[p].data()[k], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.0.is_empty() {
                report.max_rel_err = err;
                report.worst = (store.names()[p].clone(), k);
            }
        }
    }
    Ok(report)
}
