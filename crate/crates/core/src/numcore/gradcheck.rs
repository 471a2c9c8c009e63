use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{KalmError, Result};

/// Finite-difference agreement for one parameter tensor.
#[derive(Debug, Clone)]
pub struct GroupCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub groups: Vec<GroupCheck>,
    pub entries_checked: usize,
}

impl FdReport {
    pub fn worst(&self) -> Option<&GroupCheck> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// `|analytic - numeric| / (|analytic| + 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}

/// Compares reverse-mode gradients against central differences.
///
/// `f` records the objective on the tape it is given and returns the scalar
/// loss node. It must be deterministic: it is evaluated twice at the base point
/// and any difference is reported as [`KalmError::CheckInvalid`].
/// `only` restricts the check to a subset of parameters.
pub fn fd_check<F>(params: &ParamStore, eps: f64, only: Option<&[ParamId]>, mut f: F) -> Result<FdReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let eval = |p: &ParamStore, f: &mut F| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(p, &mut tape)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut tape = Tape::new();
    let loss = f(params, &mut tape)?;
    let base = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    let again = eval(params, &mut f)?;
    if base.to_bits() != again.to_bits() {
        return Err(KalmError::CheckInvalid(format!(
            "objective is not deterministic: {base} then {again}"
        )));
    }

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => params.ids().collect(),
    };
    let mut work = params.clone();
    let mut groups = Vec::with_capacity(ids.len());
    let mut checked = 0;
    for id in ids {
        let len = params.get(id).len();
        let analytic_t = grads.params().get(id);
        let mut group = GroupCheck {
            name: params.entry(id).name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..len {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(&work, &mut f)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(&work, &mut f)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = analytic_t.map_or(0.0, |t| t.data()[i]);
            let err = relative_error(analytic, numeric);
            if err > group.max_rel_err || i == 0 {
                group.max_rel_err = err;
                group.worst_index = i;
                group.analytic = analytic;
                group.numeric = numeric;
            }
            checked += 1;
        }
        groups.push(group);
    }
    let max_rel_err = groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max);
    Ok(FdReport {
        max_rel_err,
        groups,
        entries_checked: checked,
    })
}
