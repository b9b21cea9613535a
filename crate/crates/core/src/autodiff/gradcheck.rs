use alloc::string::String;
use alloc::vec::Vec;

use core::ops::Sub;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::param::ParamSet;
use super::tape::{Tape, Var};

/// Which parameter entries a finite-difference check perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntrySelection {
    All,
    /// Up to `n` evenly spaced entries per tensor, always including the first
    /// and last.
    Strided(usize),
}

impl EntrySelection {
    fn indices(&self, len: usize) -> Vec<usize> {
        match *self {
            Self::All => (0..len).collect(),
            Self::Strided(n) if n >= len => (0..len).collect(),
            Self::Strided(0) => Vec::new(),
            Self::Strided(1) => alloc::vec![0],
            Self::Strided(n) => {
                let mut out: Vec<usize> = (0..n).map(|i| i * (len - 1) / (n - 1)).collect();
                out.dedup();
                out
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries_checked: usize,
    pub worst: Option<WorstEntry>,
}

/// Compares tape gradients with central differences.
///
/// The error of one entry is
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`; the report holds
/// the maximum over all checked entries. `loss` must build the same graph on
/// every call.
pub fn finite_diff_check<F>(
    params: &mut ParamSet,
    h: f64,
    selection: EntrySelection,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: for<'a> FnMut(&mut Tape<'a>, &'a ParamSet) -> Result<Var>,
{
    let analytic = tape_gradients(params, &mut loss)?;
    finite_diff_check_with(params, h, selection, &analytic, |params: &ParamSet| {
        let mut tape = Tape::new();
        let out = loss(&mut tape, params)?;
        Ok(tape.value(out).data()[0])
    })
}

/// Gradient of a scalar loss with respect to every parameter, in
/// registration order. Unused parameters get zeros.
pub fn tape_gradients<F>(params: &ParamSet, mut loss: F) -> Result<Vec<Tensor>>
where
    F: for<'a> FnMut(&mut Tape<'a>, &'a ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = loss(&mut tape, params)?;
    let grads = tape.backward(out)?;
    let mut acc: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
    for (id, g) in grads.param_grads() {
        acc[id.index()].add_assign(g)?;
    }
    Ok(acc)
}

/// Central differences of `eval` against given `analytic` gradients.
///
/// The difference `f(x + h) - f(x - h)` is taken in `L` before converting
/// to `f64`, so an evaluator with more precision than `f64` removes the
/// cancellation error of the check itself.
pub fn finite_diff_check_with<L, F>(
    params: &mut ParamSet,
    h: f64,
    selection: EntrySelection,
    analytic: &[Tensor],
    mut eval: F,
) -> Result<GradCheckReport>
where
    L: Sub<Output = L> + Into<f64>,
    F: FnMut(&ParamSet) -> Result<L>,
{
    if analytic.len() != params.len() {
        return Err(Error::InvalidLength {
            op: "finite_diff_check",
            len: analytic.len(),
            required: params.len(),
        });
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        entries_checked: 0,
        worst: None,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let len = params.get(id).value.len();
        analytic[id.index()].check_same_shape("finite_diff_check", &params.get(id).value)?;
        for i in selection.indices(len) {
            let original = params.get(id).value.data()[i];
            let up = original + h;
            let down = original - h;
            params.get_mut(id).value.data_mut()[i] = up;
            let f_up = eval(params);
            params.get_mut(id).value.data_mut()[i] = down;
            let f_down = eval(params);
            params.get_mut(id).value.data_mut()[i] = original;
            let numeric = (f_up? - f_down?).into() / (up - down);
            let a = analytic[id.index()].data()[i];
            let err = libm::fabs(a - numeric) / (libm::fabs(a) + libm::fabs(numeric) + 1e-12);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(WorstEntry {
                    param: params.get(id).name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn quadratic_is_exact() {
        let mut params = ParamSet::new();
        let id = params.add("x", Tensor::vector(vec![0.7, -1.3, 2.0]));
        let report = finite_diff_check(&mut params, 1e-5, EntrySelection::All, |tape, p| {
            let x = tape.param(p, id);
            let sq = tape.mul(x, x)?;
            tape.sum(sq)
        })
        .unwrap();
        assert_eq!(report.entries_checked, 3);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        // parameters restored
        assert_eq!(params.get(id).value.data(), &[0.7, -1.3, 2.0]);
    }

    #[test]
    fn strided_selection_covers_ends() {
        assert_eq!(EntrySelection::Strided(3).indices(10), vec![0, 4, 9]);
        assert_eq!(EntrySelection::Strided(20).indices(4), vec![0, 1, 2, 3]);
    }
}
