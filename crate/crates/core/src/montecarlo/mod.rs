//! Photon-counting simulation of the Zernike-projection measurement and
//! maximum-likelihood separation estimation.
//!
//! Each centroid draw fixes a true centroid `s`; frames are sampled from
//! the channel probabilities at `(l, s)` and then fitted with the centroid
//! assumed to be at the origin. Variances of the estimates are reported per
//! draw alongside the classical and quantum bounds.

mod estimator;
mod nelder_mead;
pub mod rng;
mod sampling;

use rayon::prelude::*;

use crate::aperture::{PupilFunction, ZernikeBasis};
use crate::channels::{classical_fi, ChannelEvaluator};
use crate::error::{Error, Result};
use crate::overlap::{SceneParams, Vec3};
use crate::qfi::{compute_h_ll, invert_block};

pub use estimator::{ml_estimate, negative_log_likelihood, EstimatorSettings, MlEstimate};
pub use nelder_mead::{minimize, SimplexOptions, SimplexResult};
pub use rng::{substream, StreamKind};
pub use sampling::{draw_centroid, sample_frame, CountFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub true_l: Vec3,
    pub sigma_s: Vec3,
    pub n_centroid_draws: usize,
    pub frames_per_draw: usize,
    pub photons_per_frame: u64,
    pub seed: u64,
    /// Starting guess for the fit; the true separation when absent.
    pub init: Option<Vec3>,
    pub estimator: EstimatorSettings,
}

impl Default for SimulationConfig {
    /// Desk-scale settings: 10 draws × 200 frames × 1e5 photons.
    fn default() -> Self {
        Self {
            true_l: [0.2, 0.025, 0.025],
            sigma_s: [0.005, 0.005, 0.01],
            n_centroid_draws: 10,
            frames_per_draw: 200,
            photons_per_frame: 100_000,
            seed: 42,
            init: None,
            estimator: EstimatorSettings::default(),
        }
    }
}

impl SimulationConfig {
    /// 40 draws × 400 frames × 1e6 photons.
    pub fn paper_scale(true_l: Vec3, seed: u64) -> Self {
        Self {
            true_l,
            n_centroid_draws: 40,
            frames_per_draw: 400,
            photons_per_frame: 1_000_000,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSimulation(msg));
        if self.n_centroid_draws == 0 || self.frames_per_draw == 0 || self.photons_per_frame == 0 {
            return bad("draw, frame and photon counts must be positive".into());
        }
        if self.frames_per_draw < 2 {
            return bad("at least two frames per draw are needed for a variance".into());
        }
        if self.n_centroid_draws >= 1 << 30 || self.frames_per_draw as u64 >= 1 << 32 {
            return bad("too many draws or frames for the stream layout".into());
        }
        if self.sigma_s.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad(format!(
                "centroid jitter must be non-negative, got {:?}",
                self.sigma_s
            ));
        }
        if self.true_l.iter().any(|v| !v.is_finite()) {
            return bad("true separation must be finite".into());
        }
        if self.estimator.multistart == 0 || !(self.estimator.xtol > 0.0) {
            return bad("estimator needs at least one start and a positive tolerance".into());
        }
        Ok(())
    }
}

/// Statistics of the estimates within one centroid draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawReport {
    pub s: Vec3,
    pub mean: Vec3,
    /// Unbiased sample variance of each estimated component.
    pub variance: Vec3,
    /// Diagonal of the classical CRB at the drawn centroid, if invertible.
    pub crb: Option<Vec3>,
    pub unconverged: usize,
    pub reflected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport {
    pub true_l: Vec3,
    pub photons_per_frame: u64,
    pub frames_per_draw: usize,
    pub draws: Vec<DrawReport>,
    pub variance_mean: Vec3,
    /// Spread of the per-draw variances (zero with a single draw).
    pub variance_std: Vec3,
    /// Classical CRB diagonal at `s = 0`, for `photons_per_frame` photons.
    pub crb_s0: Vec3,
    /// Classical CRB diagonal averaged over draws that could be inverted.
    pub crb_draw_mean: Option<Vec3>,
    /// Quantum bound on the separation for `photons_per_frame` photons.
    pub qcrb: Vec3,
    pub unconverged: usize,
    pub reflected: usize,
}

fn diagonal(m: &nalgebra::Matrix3<f64>) -> Vec3 {
    [m[(0, 0)], m[(1, 1)], m[(2, 2)]]
}

fn crb_diagonal(evaluator: &ChannelEvaluator, scene: &SceneParams, photons: f64) -> Result<Vec3> {
    let model = evaluator.derivatives(scene)?;
    let fi = classical_fi(&model, photons)?;
    Ok(diagonal(&fi.crb()?.inverse))
}

fn mean_and_variance(values: impl Iterator<Item = Vec3> + Clone) -> (Vec3, Vec3) {
    let n = values.clone().count() as f64;
    let mut mean = [0.0; 3];
    for v in values.clone() {
        for m in 0..3 {
            mean[m] += v[m] / n;
        }
    }
    let mut var = [0.0; 3];
    if n > 1.0 {
        for v in values {
            for m in 0..3 {
                var[m] += (v[m] - mean[m]).powi(2) / (n - 1.0);
            }
        }
    }
    (mean, var)
}

pub fn run_experiment(
    config: &SimulationConfig,
    pupil: &PupilFunction,
    basis: &ZernikeBasis,
) -> Result<EstimationReport> {
    config.validate()?;
    let evaluator = ChannelEvaluator::new(pupil, basis);
    let photons = config.photons_per_frame as f64;
    let init = config.init.unwrap_or(config.true_l);

    let centroids: Vec<Vec3> = (0..config.n_centroid_draws)
        .map(|d| {
            let mut rng = substream(config.seed, StreamKind::Centroid, d as u64, 0);
            draw_centroid(&config.sigma_s, &mut rng)
        })
        .collect();
    let data_probs: Vec<Vec<f64>> = centroids
        .iter()
        .map(|s| {
            evaluator
                .probabilities(&SceneParams::with_l(config.true_l).with_s(*s))
                .map(|m| m.full_probabilities())
        })
        .collect::<Result<_>>()?;

    let frames = config.frames_per_draw;
    let estimates: Vec<MlEstimate> = (0..config.n_centroid_draws * frames)
        .into_par_iter()
        .map(|k| {
            let (d, f) = (k / frames, k % frames);
            let mut rng = substream(config.seed, StreamKind::Frame, d as u64, f as u64);
            let frame = sample_frame(&data_probs[d], config.photons_per_frame, &mut rng)?;
            Ok(ml_estimate(&frame, &evaluator, &init, &config.estimator))
        })
        .collect::<Result<_>>()?;

    let mut draws = Vec::with_capacity(config.n_centroid_draws);
    for (d, s) in centroids.iter().enumerate() {
        let chunk = &estimates[d * frames..(d + 1) * frames];
        let (mean, variance) = mean_and_variance(chunk.iter().map(|e| e.l));
        let scene = SceneParams::with_l(config.true_l).with_s(*s);
        draws.push(DrawReport {
            s: *s,
            mean,
            variance,
            crb: crb_diagonal(&evaluator, &scene, photons).ok(),
            unconverged: chunk.iter().filter(|e| !e.converged).count(),
            reflected: chunk.iter().filter(|e| e.reflected).count(),
        });
    }

    let (variance_mean, variance_var) = mean_and_variance(draws.iter().map(|d| d.variance));
    let invertible: Vec<Vec3> = draws.iter().filter_map(|d| d.crb).collect();
    let crb_draw_mean =
        (!invertible.is_empty()).then(|| mean_and_variance(invertible.iter().copied()).0);
    let crb_s0 = crb_diagonal(&evaluator, &SceneParams::with_l(config.true_l), photons)?;
    let qcrb = diagonal(&invert_block(&compute_h_ll(pupil), "H(ll)")?.inverse).map(|v| v / photons);

    Ok(EstimationReport {
        true_l: config.true_l,
        photons_per_frame: config.photons_per_frame,
        frames_per_draw: frames,
        variance_mean,
        variance_std: variance_var.map(f64::sqrt),
        crb_s0,
        crb_draw_mean,
        qcrb,
        unconverged: draws.iter().map(|d| d.unconverged).sum(),
        reflected: draws.iter().map(|d| d.reflected).sum(),
        draws,
    })
}
