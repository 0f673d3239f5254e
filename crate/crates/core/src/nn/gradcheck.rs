use super::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Points whose signed-sqrt inputs come closer than this to zero are
/// reported as ill-conditioned for central differences: at distance `x`
/// the difference quotient of `sqrt` is off by about `(h / x)^2 / 8`.
pub const SQRT_KINK_MARGIN: f64 = 2e-3;
/// Same for ReLU and clamp corners. Their slope does not blow up, so the
/// point only has to be further away than one step can move an input.
pub const HINGE_KINK_MARGIN: f64 = 1e-4;

/// Outcome of comparing analytic gradients with central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Smallest nonzero signed-sqrt input at the evaluation point.
    pub sqrt_margin: Option<f64>,
    /// Smallest nonzero distance of a ReLU or clamp input from its corner.
    pub hinge_margin: Option<f64>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }

    /// False when the point sits close enough to a kink that the finite
    /// differences themselves are inaccurate.
    pub fn well_conditioned(&self) -> bool {
        self.sqrt_margin.is_none_or(|m| m >= SQRT_KINK_MARGIN)
            && self.hinge_margin.is_none_or(|m| m >= HINGE_KINK_MARGIN)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} entries, max rel err {:.3e}", self.checked, self.max_rel_error)?;
        if let Some((name, i)) = &self.worst {
            write!(f, " at {name}[{i}]")?;
        }
        if let Some(m) = self.sqrt_margin {
            write!(f, ", sqrt margin {m:.2e}")?;
        }
        if let Some(m) = self.hinge_margin {
            write!(f, ", hinge margin {m:.2e}")?;
        }
        Ok(())
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients
/// from turning round-off into huge ratios.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Checks `d loss / d p` for every entry of the parameters `ids`.
///
/// `loss` must build a fresh trace from the store and return its scalar
/// output; it must be deterministic (no fresh randomness between calls).
/// Entries are subsampled with stride `stride` to bound cost.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    stride: usize,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Graph, Var)>,
{
    let (mut g, out) = loss(store)?;
    let sqrt_margin = g.sqrt_margin();
    let hinge_margin = g.hinge_margin();
    let grads = g.backward_scalar(out)?;
    let stride = stride.max(1);
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        sqrt_margin,
        hinge_margin,
    };
    let mut eval = |store: &ParamStore| -> Result<f64> {
        let (g, out) = loss(store)?;
        let v = g.value(out).data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite("loss during finite differences".into()));
        }
        Ok(v)
    };
    for &id in ids {
        let n = store.get(id).len();
        for k in (0..n).step_by(stride) {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[k]);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
