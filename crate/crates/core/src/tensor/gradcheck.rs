use super::{ParamId, ParamStore, Rng, Session, Var};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative-error denominator floor, as a fraction of `max(1, |loss|)`.
/// Groups whose gradient is smaller than this are judged by absolute error.
const REL_FLOOR: f64 = 1e-5;

/// Entries whose central differences at `h` and `h/2` disagree by more than
/// this fraction (or by more than the roundoff allowance) straddle a kink.
const KINK_RATIO: f64 = 1e-5;
const ROUNDOFF: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct GroupError {
    pub name: String,
    pub checked: usize,
    /// Entries passed over because the difference interval crossed a kink.
    pub skipped: usize,
    pub max_abs_err: f64,
    /// `max|analytic − numeric| / max(max|analytic|, max|numeric|, 1e-5·max(1, |loss|))`.
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub groups: Vec<GroupError>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().fold(0.0, |m, g| m.max(g.rel_err))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }

    pub fn worst(&self) -> Option<&GroupError> {
        self.groups.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences, one group per stored tensor.
///
/// With `max_entries = Some(k)`, at most `k` entries of each tensor are probed,
/// chosen by `rng`; otherwise every entry is. Entries near a kink of `f` are
/// skipped and replaced by further random entries while any remain. A group
/// with no smooth entry at all reports an infinite error.
pub fn gradcheck<F>(store: &ParamStore, f: F, max_entries: Option<usize>, rng: &mut Rng) -> Result<GradcheckReport>
where
    F: Fn(&mut Session) -> Result<Var>,
{
    let (analytic, base) = {
        let mut s = Session::new(store);
        let loss = f(&mut s)?;
        let base = s.g.value(loss).item();
        s.backward(loss)?;
        (s.grads(), base)
    };
    let scale = base.abs().max(1.0);
    let eval = |st: &ParamStore| -> Result<f64> {
        let mut s = Session::new(st);
        let loss = f(&mut s)?;
        Ok(s.g.value(loss).item())
    };

    let mut work = store.clone();
    let mut report = GradcheckReport::default();
    let ids: Vec<ParamId> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let n = store.get(id).numel();
        let mut entries: Vec<usize> = (0..n).collect();
        let cap = match max_entries {
            Some(cap) if n > cap => {
                rng.shuffle(&mut entries);
                cap
            }
            _ => n,
        };
        let mut central = |e: usize, h: f64| -> Result<f64> {
            let orig = work.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[e] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[e] = orig;
            Ok((up - down) / (2.0 * h))
        };
        let (mut checked, mut skipped) = (0, 0);
        let (mut max_err, mut max_a, mut max_n) = (0.0f64, 0.0f64, 0.0f64);
        for &e in &entries {
            if checked == cap {
                break;
            }
            let numeric = central(e, FD_STEP)?;
            let half = central(e, FD_STEP / 2.0)?;
            if (numeric - half).abs() > (KINK_RATIO * numeric.abs()).max(ROUNDOFF * scale) {
                skipped += 1;
                continue;
            }
            checked += 1;
            let a = analytic[k].data()[e];
            max_err = max_err.max((a - numeric).abs());
            max_a = max_a.max(a.abs());
            max_n = max_n.max(numeric.abs());
        }
        let rel_err = if checked == 0 {
            f64::INFINITY
        } else {
            max_err / max_a.max(max_n).max(REL_FLOOR * scale)
        };
        report.groups.push(GroupError {
            name: store.name(id).to_string(),
            checked,
            skipped,
            max_abs_err: max_err,
            rel_err,
        });
    }
    Ok(report)
}

