//! Central-difference gradient checking.

use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct FdOptions {
    /// Base step; the step for parameter `i` is `h * scales[i]`.
    pub h: f64,
    /// Per-parameter step multipliers; empty means all ones.
    pub scales: Vec<f64>,
    /// Entries whose difference quotients at `h` and `2h` disagree by more than
    /// `smooth_tol` times the block magnitude are treated as sitting on a kink
    /// and excluded. Set to infinity to check every entry.
    pub smooth_tol: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            h: 1e-4,
            scales: Vec::new(),
            smooth_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub n_params: usize,
    pub n_checked: usize,
    pub n_skipped: usize,
    /// Largest `|fd - analytic|` over checked entries.
    pub max_abs_error: f64,
    /// Largest magnitude of either gradient over checked entries.
    pub magnitude: f64,
    /// `max_abs_error / magnitude` (zero when both gradients vanish).
    pub rel_error: f64,
    pub worst_index: Option<usize>,
    /// False when the function produced a non-finite value.
    pub finite: bool,
}

impl FdReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.finite && self.n_checked > 0 && self.rel_error < tol
    }

    pub fn coverage(&self) -> f64 {
        if self.n_params == 0 {
            return 1.0;
        }
        self.n_checked as f64 / self.n_params as f64
    }
}

/// Compare `grad` against central differences of `f` around `x`.
pub fn fd_check<F>(f: F, x: &[f64], grad: &[f64], opts: &FdOptions) -> FdReport
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    assert_eq!(x.len(), grad.len(), "parameter and gradient lengths differ");
    let f0 = f(x);
    let per_param: Vec<Option<(f64, f64)>> = crate::parallel::install(|| {
        (0..x.len())
            .into_par_iter()
            .map(|i| {
                let h = opts.h * opts.scales.get(i).copied().unwrap_or(1.0);
                let mut p = x.to_vec();
                let mut eval = |d: f64| {
                    p[i] = x[i] + d;
                    f(&p)
                };
                let (a, b, c, d) = (eval(h), eval(-h), eval(2.0 * h), eval(-2.0 * h));
                if ![a, b, c, d].iter().all(|v| v.is_finite()) {
                    return None;
                }
                Some(((a - b) / (2.0 * h), (c - d) / (4.0 * h)))
            })
            .collect()
    });

    let finite = f0.is_finite() && per_param.iter().all(|v| v.is_some());
    let mut report = FdReport {
        n_params: x.len(),
        n_checked: 0,
        n_skipped: 0,
        max_abs_error: 0.0,
        magnitude: 0.0,
        rel_error: 0.0,
        worst_index: None,
        finite,
    };
    if !finite {
        report.rel_error = f64::INFINITY;
        return report;
    }
    let diffs: Vec<(f64, f64)> = per_param.into_iter().map(|v| v.expect("finite")).collect();
    let block = diffs
        .iter()
        .zip(grad)
        .map(|((d1, _), g)| d1.abs().max(g.abs()))
        .fold(0.0, f64::max);
    for (i, ((d1, d2), g)) in diffs.iter().zip(grad).enumerate() {
        if (d1 - d2).abs() > opts.smooth_tol * block {
            report.n_skipped += 1;
            continue;
        }
        report.n_checked += 1;
        report.magnitude = report.magnitude.max(d1.abs()).max(g.abs());
        let err = (d1 - g).abs();
        if report.worst_index.is_none() || err > report.max_abs_error {
            report.max_abs_error = err;
            report.worst_index = Some(i);
        }
    }
    report.rel_error = if report.magnitude > 0.0 {
        report.max_abs_error / report.magnitude
    } else {
        0.0
    };
    report
}
