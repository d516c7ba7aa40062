//! Selection of `(alpha, h)` by forecast mean-square error over a finite
//! candidate grid.
//!
//! For each candidate the field is estimated from the transitions, every
//! start point is pushed through the flow for the transition horizon, and
//! the squared distances to the observed end points are averaged. Fit and
//! evaluation use the same transitions unless a holdout is requested.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{forecast_all, GridFlow, IntegrateOptions};
use crate::kde::{Kernel, NormalizerRule};
use crate::moran::Transition;
use crate::par;
use crate::rvf::{EvalGrid, RvfEstimator, RvfParams};
use crate::stats::stream_rng;

pub const DEFAULT_H_GRID: [f64; 10] = [0.04, 0.06, 0.08, 0.11, 0.15, 0.21, 0.29, 0.41, 0.57, 0.80];
pub const DEFAULT_ALPHA_GRID: [f64; 10] =
    [0.0, 0.0005, 0.0012, 0.0028, 0.0067, 0.0158, 0.0375, 0.0889, 0.2108, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    /// Share of transitions held out for evaluation.
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub h_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub kernel: Kernel,
    pub rule: NormalizerRule,
    pub step: f64,
    /// Candidates whose stalled share exceeds this fail.
    pub max_stalled_share: f64,
    pub holdout: Option<Holdout>,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            h_grid: DEFAULT_H_GRID.to_vec(),
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            kernel: Kernel::Epanechnikov,
            rule: NormalizerRule::default(),
            step: 0.1,
            max_stalled_share: 0.1,
            holdout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Ok,
    EmptyField,
    Stalled,
    Failed,
}

impl CandidateStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CandidateStatus::Ok => "ok",
            CandidateStatus::EmptyField => "empty_field",
            CandidateStatus::Stalled => "stalled",
            CandidateStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub alpha: f64,
    pub h: f64,
    /// `None` unless the status is `Ok`.
    pub mse: Option<f64>,
    pub stalled_share: f64,
    pub status: CandidateStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub h_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    /// Alpha-major: all `h` for the first alpha, then the next.
    pub candidates: Vec<Candidate>,
    pub best_alpha: f64,
    pub best_h: f64,
    pub best_mse: f64,
    pub in_sample: bool,
}

impl TuneResult {
    pub fn best(&self) -> (f64, f64) {
        (self.best_alpha, self.best_h)
    }
}

/// Forecast MSE of one candidate with the fraction of stalled trajectories.
pub fn forecast_mse(
    fit: &[Transition],
    eval: &[Transition],
    params: &RvfParams,
    grid: &EvalGrid,
    step: f64,
) -> Result<(f64, f64)> {
    let field = RvfEstimator::from_transitions(fit, params)?.on_grid(grid);
    if field.n_nonempty() == 0 {
        return Err(Error::EmptyField);
    }
    let horizon = fit[0].horizon as f64;
    let starts: Vec<_> = eval.iter().map(|t| (t.unit, t.start)).collect();
    let opts = IntegrateOptions { step, converge_tol: None, record_every: usize::MAX };
    let trajs = forecast_all(&GridFlow::new(&field), &starts, horizon, &opts)?;
    let mut sum = 0.0;
    let mut stalled = 0usize;
    for (t, tr) in eval.iter().zip(&trajs) {
        sum += (tr.terminal - t.end).norm_sq();
        stalled += usize::from(tr.stalled || tr.failed);
    }
    Ok((sum / eval.len() as f64, stalled as f64 / eval.len() as f64))
}

pub fn tune(transitions: &[Transition], grid: &EvalGrid, opts: &TuneOptions) -> Result<TuneResult> {
    let n_cand = opts.h_grid.len() * opts.alpha_grid.len();
    if n_cand == 0 {
        return Err(Error::invalid("empty tuning grid"));
    }
    if transitions.len() < 3 {
        return Err(Error::invalid("tuning needs at least 3 transitions"));
    }
    let (fit, eval): (Vec<Transition>, Vec<Transition>) = match opts.holdout {
        None => (transitions.to_vec(), transitions.to_vec()),
        Some(ho) => {
            if !(ho.fraction > 0.0 && ho.fraction < 1.0) {
                return Err(Error::invalid("holdout fraction must lie in (0, 1)"));
            }
            let mut idx: Vec<usize> = (0..transitions.len()).collect();
            idx.shuffle(&mut stream_rng(ho.seed, 0));
            let n_eval = ((transitions.len() as f64 * ho.fraction).round() as usize)
                .clamp(1, transitions.len() - 3);
            let (e, f) = idx.split_at(n_eval);
            let mut e = e.to_vec();
            let mut f = f.to_vec();
            e.sort_unstable();
            f.sort_unstable();
            (
                f.iter().map(|&i| transitions[i]).collect(),
                e.iter().map(|&i| transitions[i]).collect(),
            )
        }
    };

    let nh = opts.h_grid.len();
    let candidates = par::map_range(n_cand, |k| {
        let alpha = opts.alpha_grid[k / nh];
        let h = opts.h_grid[k % nh];
        let params = RvfParams { h, alpha, kernel: opts.kernel, rule: opts.rule };
        match forecast_mse(&fit, &eval, &params, grid, opts.step) {
            Ok((mse, stalled)) if stalled > opts.max_stalled_share => Candidate {
                alpha,
                h,
                mse: None,
                stalled_share: stalled,
                status: CandidateStatus::Stalled,
                message: Some(format!("{:.1}% of trajectories stalled", stalled * 100.0)),
            }
            .with_raw_mse(mse),
            Ok((mse, stalled)) if mse.is_finite() => Candidate {
                alpha,
                h,
                mse: Some(mse),
                stalled_share: stalled,
                status: CandidateStatus::Ok,
                message: None,
            },
            Ok(_) => Candidate {
                alpha,
                h,
                mse: None,
                stalled_share: 0.0,
                status: CandidateStatus::Failed,
                message: Some("non-finite MSE".into()),
            },
            Err(Error::EmptyField) => Candidate {
                alpha,
                h,
                mse: None,
                stalled_share: 0.0,
                status: CandidateStatus::EmptyField,
                message: None,
            },
            Err(e) => Candidate {
                alpha,
                h,
                mse: None,
                stalled_share: 0.0,
                status: CandidateStatus::Failed,
                message: Some(e.to_string()),
            },
        }
    });

    let best = candidates
        .iter()
        .filter_map(|c| c.mse.map(|m| (m, c.h, c.alpha)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)))
        .ok_or(Error::NoViableCandidate)?;

    Ok(TuneResult {
        h_grid: opts.h_grid.clone(),
        alpha_grid: opts.alpha_grid.clone(),
        candidates,
        best_alpha: best.2,
        best_h: best.1,
        best_mse: best.0,
        in_sample: opts.holdout.is_none(),
    })
}

impl Candidate {
    fn with_raw_mse(mut self, mse: f64) -> Self {
        if let Some(m) = self.message.as_mut() {
            m.push_str(&format!("; raw MSE {mse}"));
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::two_basin_transitions;

    #[test]
    fn default_grid_has_100_candidates() {
        let o = TuneOptions::default();
        assert_eq!(o.h_grid.len() * o.alpha_grid.len(), 100);
    }

    #[test]
    fn single_candidate_is_argmin() {
        let ts = two_basin_transitions(300, 0.1, 5);
        let grid = EvalGrid::for_transitions(&ts, 0.3, 20, 20).unwrap();
        let opts = TuneOptions { h_grid: vec![0.3], alpha_grid: vec![0.0067], ..Default::default() };
        let r = tune(&ts, &grid, &opts).unwrap();
        assert_eq!(r.best(), (0.0067, 0.3));
        assert_eq!(r.candidates.len(), 1);
        assert!(r.best_mse >= 0.0);
    }

    #[test]
    fn empty_candidates_are_not_argmin() {
        let ts = two_basin_transitions(200, 0.1, 6);
        let grid = EvalGrid::for_transitions(&ts, 0.3, 20, 20).unwrap();
        let opts = TuneOptions { h_grid: vec![1e-6, 0.3], alpha_grid: vec![0.0], ..Default::default() };
        let r = tune(&ts, &grid, &opts).unwrap();
        assert_ne!(r.candidates[0].status, CandidateStatus::Ok);
        assert!(r.candidates[0].mse.is_none());
        assert_eq!(r.best_h, 0.3);
    }
}
