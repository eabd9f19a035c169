//! Maximum-likelihood separation estimate from one count frame.
//!
//! The likelihood is evaluated with the centroid fixed at the origin. For a
//! clear pupil it is exactly even in each separation component, so the
//! optimizer's answer is mapped to the reflection closest to the initial
//! guess whenever that reflection is equally likely.

use crate::channels::{ChannelEvaluator, PROBABILITY_FLOOR};
use crate::overlap::{SceneParams, Vec3};

use super::nelder_mead::{minimize, SimplexOptions};
use super::sampling::CountFrame;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSettings {
    /// Number of simplex starts; the first is the initial guess itself.
    pub multistart: usize,
    /// Offset of the extra starts from the initial guess, per component.
    pub jitter: f64,
    pub initial_step: f64,
    /// Convergence tolerance on the parameter step.
    pub xtol: f64,
    pub max_iter: usize,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            multistart: 4,
            jitter: 0.05,
            initial_step: 0.01,
            xtol: 1e-6,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlEstimate {
    pub l: Vec3,
    pub neg_log_likelihood: f64,
    pub converged: bool,
    /// The optimizer landed on a mirror image that was swapped for the
    /// equally likely branch nearer the initial guess.
    pub reflected: bool,
    pub evaluations: usize,
}

const START_OFFSETS: [Vec3; 8] = [
    [0.0, 0.0, 0.0],
    [1.0, 1.0, -1.0],
    [1.0, -1.0, 1.0],
    [-1.0, 1.0, 1.0],
    [-1.0, -1.0, -1.0],
    [1.0, 1.0, 1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, -1.0],
];

/// `-Σ m_n ln P_n(l; s=0) - m̄ ln P̄(l; s=0)` with probabilities floored.
pub fn negative_log_likelihood(evaluator: &ChannelEvaluator, frame: &CountFrame, l: &Vec3) -> f64 {
    let probs = evaluator.raw_probabilities(&SceneParams::with_l(*l));
    let bucket = 1.0 - probs.iter().sum::<f64>();
    let mut nll = 0.0;
    for (m, p) in frame.counts.iter().zip(&probs) {
        if *m > 0 {
            nll -= *m as f64 * p.max(PROBABILITY_FLOOR).ln();
        }
    }
    if frame.bucket > 0 {
        nll -= frame.bucket as f64 * bucket.max(PROBABILITY_FLOOR).ln();
    }
    nll
}

pub fn ml_estimate(
    frame: &CountFrame,
    evaluator: &ChannelEvaluator,
    init: &Vec3,
    settings: &EstimatorSettings,
) -> MlEstimate {
    let opts = SimplexOptions {
        initial_step: settings.initial_step,
        xtol: settings.xtol,
        max_iter: settings.max_iter,
    };
    let objective = |l: &Vec3| negative_log_likelihood(evaluator, frame, l);
    let mut best: Option<MlEstimate> = None;
    let mut evaluations = 0;
    for k in 0..settings.multistart.max(1) {
        let offset = START_OFFSETS[k % START_OFFSETS.len()];
        let x0 = std::array::from_fn(|m| init[m] + settings.jitter * offset[m]);
        let r = minimize(objective, x0, &opts);
        evaluations += r.evaluations;
        if best.is_none_or(|b| r.value < b.neg_log_likelihood) {
            best = Some(MlEstimate {
                l: r.x,
                neg_log_likelihood: r.value,
                converged: r.converged,
                reflected: false,
                evaluations: 0,
            });
        }
    }
    let mut best = best.expect("at least one start");
    best.evaluations = evaluations;

    let tie = 1e-9 * (1.0 + best.neg_log_likelihood.abs());
    let distance = |l: &Vec3| -> f64 { (0..3).map(|m| (l[m] - init[m]).powi(2)).sum() };
    let mut chosen = best.l;
    for mask in 1..8u8 {
        let mirror: Vec3 = std::array::from_fn(|m| {
            if mask & (1 << m) != 0 {
                -best.l[m]
            } else {
                best.l[m]
            }
        });
        if distance(&mirror) < distance(&chosen) {
            let v = objective(&mirror);
            best.evaluations += 1;
            if v <= best.neg_log_likelihood + tie {
                chosen = mirror;
            }
        }
    }
    if chosen != best.l {
        best.reflected = true;
        best.l = chosen;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aperture::{PupilFunction, QuadratureSpec, ZernikeBasis};

    fn evaluator() -> ChannelEvaluator {
        let pupil = PupilFunction::clear_circular(QuadratureSpec::new(40, 80).unwrap()).unwrap();
        ChannelEvaluator::new(&pupil, &ZernikeBasis::new(4).unwrap())
    }

    fn noiseless_frame(ev: &ChannelEvaluator, l: Vec3, photons: u64) -> CountFrame {
        let model = ev.probabilities(&SceneParams::with_l(l)).unwrap();
        let counts: Vec<u64> = model
            .probs
            .iter()
            .map(|p| (p * photons as f64).round() as u64)
            .collect();
        let used: u64 = counts.iter().sum();
        CountFrame::new(counts, photons - used)
    }

    #[test]
    fn noiseless_frame_recovers_truth() {
        let ev = evaluator();
        let truth = [0.2, 0.025, 0.025];
        let frame = noiseless_frame(&ev, truth, 1_000_000);
        let est = ml_estimate(&frame, &ev, &truth, &EstimatorSettings::default());
        assert!(est.converged);
        for m in 0..3 {
            assert!((est.l[m] - truth[m]).abs() < 2e-3, "{:?}", est.l);
        }
    }

    #[test]
    fn mirrored_branch_is_folded_toward_init() {
        let ev = evaluator();
        let truth = [0.2, 0.05, 0.1];
        let frame = noiseless_frame(&ev, truth, 1_000_000);
        let mirror = [-0.2, -0.05, -0.1];
        let a = negative_log_likelihood(&ev, &frame, &truth);
        let b = negative_log_likelihood(&ev, &frame, &mirror);
        assert!((a - b).abs() < 1e-8 * a.abs());
        let near_mirror = ml_estimate(&frame, &ev, &mirror, &EstimatorSettings::default());
        assert!(near_mirror.l[0] < 0.0 && near_mirror.l[2] < 0.0);
        let near_truth = ml_estimate(&frame, &ev, &truth, &EstimatorSettings::default());
        assert!(near_truth.l.iter().all(|v| *v > 0.0));
    }
}
