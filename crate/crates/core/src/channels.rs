//! Zernike projection channels and the multinomial Fisher information.
//!
//! Channel `n` projects a photon onto the unit-disk mode `Z_n/sqrt(pi)`.
//! With `a±_n = <Z_n|K±>` the detection probability is
//! `P_n = (|a+_n|^2 + |a-_n|^2)/2`; the photons not captured by any listed
//! mode land in a bucket with probability `1 - Σ P_n`.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::aperture::{PupilFunction, ZernikeBasis};
use crate::error::{Error, Result};
use crate::overlap::{dot, phase_gradient, SceneParams, Vec3};
use crate::qfi::{invert_block, BlockInverse};

/// Probabilities below this are excluded from Fisher sums and floored in
/// log-likelihoods.
pub const PROBABILITY_FLOOR: f64 = 1e-12;
/// Central-difference step for the derivative cross-check.
pub const DERIVATIVE_FD_STEP: f64 = 1e-4;
/// Allowed relative disagreement between analytic and difference derivatives.
pub const DERIVATIVE_REL_TOL: f64 = 1e-5;
/// Derivatives smaller than this are compared in absolute terms.
const DERIVATIVE_ABS_FLOOR: f64 = 1e-6;
/// Negative bucket mass tolerated as rounding before it is an error.
const BUCKET_SLACK: f64 = 1e-10;

const AXES: [char; 3] = ['x', 'y', 'z'];

/// Channel probabilities at one scene, optionally with `l` derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub n_channels: usize,
    pub probs: Vec<f64>,
    pub bucket: f64,
    /// `dprobs[n][μ] = ∂P_{n+1}/∂l_μ`
    pub dprobs: Option<Vec<Vec3>>,
    pub dbucket: Option<Vec3>,
    pub scene: SceneParams,
}

impl ChannelModel {
    /// `P_1 .. P_N` followed by the bucket.
    pub fn full_probabilities(&self) -> Vec<f64> {
        let mut p = self.probs.clone();
        p.push(self.bucket);
        p
    }

    /// Derivative rows matching [`Self::full_probabilities`].
    pub fn full_derivatives(&self) -> Option<Vec<Vec3>> {
        let mut d = self.dprobs.clone()?;
        d.push(self.dbucket?);
        Some(d)
    }
}

/// Precomputed projections of the pupil onto the Zernike modes.
///
/// Holding one of these avoids re-evaluating the basis at every node when
/// probabilities are needed many times, as in likelihood maximization.
#[derive(Debug, Clone)]
pub struct ChannelEvaluator {
    n_modes: usize,
    /// `coeffs[node * n_modes + n] = w(node) Z_n(node) P(node) / sqrt(pi)`
    coeffs: Vec<Complex64>,
    grads: Vec<Vec3>,
}

struct Amplitudes {
    plus: Vec<Complex64>,
    minus: Vec<Complex64>,
    dplus: Vec<[Complex64; 3]>,
    dminus: Vec<[Complex64; 3]>,
}

impl ChannelEvaluator {
    pub fn new(pupil: &PupilFunction, basis: &ZernikeBasis) -> Self {
        let n_modes = basis.n_modes();
        let inv_root_pi = PI.sqrt().recip();
        let mut coeffs = Vec::with_capacity(pupil.nodes().len() * n_modes);
        for ((p, w), v) in pupil
            .nodes()
            .iter()
            .zip(pupil.weights())
            .zip(pupil.values())
        {
            for mode in basis.modes() {
                coeffs.push(*v * (w * mode.eval(*p) * inv_root_pi));
            }
        }
        let grads = pupil.nodes().iter().map(|p| phase_gradient(*p)).collect();
        Self {
            n_modes,
            coeffs,
            grads,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    fn amplitudes(&self, scene: &SceneParams, with_derivatives: bool) -> Amplitudes {
        let n = self.n_modes;
        let zero = Complex64::new(0.0, 0.0);
        let mut out = Amplitudes {
            plus: vec![zero; n],
            minus: vec![zero; n],
            dplus: if with_derivatives {
                vec![[zero; 3]; n]
            } else {
                Vec::new()
            },
            dminus: if with_derivatives {
                vec![[zero; 3]; n]
            } else {
                Vec::new()
            },
        };
        let centered = scene.s == [0.0; 3];
        for (node, g) in self.grads.iter().enumerate() {
            let psi = dot(g, &scene.l);
            let (sp, cp) = psi.sin_cos();
            // e± = exp(-i g·s) exp(∓i psi)
            let (ep, em) = if centered {
                (Complex64::new(cp, -sp), Complex64::new(cp, sp))
            } else {
                let theta = dot(g, &scene.s);
                let (st, ct) = theta.sin_cos();
                let c = Complex64::new(ct, -st);
                (c * Complex64::new(cp, -sp), c * Complex64::new(cp, sp))
            };
            let row = &self.coeffs[node * n..(node + 1) * n];
            for (k, c) in row.iter().enumerate() {
                let tp = c * ep;
                let tm = c * em;
                out.plus[k] += tp;
                out.minus[k] += tm;
                if with_derivatives {
                    // ∂e±/∂l_μ = ∓i g_μ e±
                    for m in 0..3 {
                        out.dplus[k][m] += Complex64::new(tp.im * g[m], -tp.re * g[m]);
                        out.dminus[k][m] += Complex64::new(-tm.im * g[m], tm.re * g[m]);
                    }
                }
            }
        }
        out
    }

    /// `P_1 .. P_N` at `scene`, without bucket bookkeeping.
    pub fn raw_probabilities(&self, scene: &SceneParams) -> Vec<f64> {
        let a = self.amplitudes(scene, false);
        a.plus
            .iter()
            .zip(&a.minus)
            .map(|(p, m)| 0.5 * (p.norm_sqr() + m.norm_sqr()))
            .collect()
    }

    pub fn probabilities(&self, scene: &SceneParams) -> Result<ChannelModel> {
        let probs = self.raw_probabilities(scene);
        let bucket = bucket_of(&probs)?;
        Ok(ChannelModel {
            n_channels: self.n_modes,
            probs,
            bucket,
            dprobs: None,
            dbucket: None,
            scene: *scene,
        })
    }

    /// Probabilities and analytic `l` derivatives, without the
    /// finite-difference check.
    pub fn derivatives_unchecked(&self, scene: &SceneParams) -> Result<ChannelModel> {
        let a = self.amplitudes(scene, true);
        let mut probs = Vec::with_capacity(self.n_modes);
        let mut dprobs = Vec::with_capacity(self.n_modes);
        for k in 0..self.n_modes {
            let (p, m) = (a.plus[k], a.minus[k]);
            probs.push(0.5 * (p.norm_sqr() + m.norm_sqr()));
            dprobs.push(std::array::from_fn(|mu| {
                (p.conj() * a.dplus[k][mu]).re + (m.conj() * a.dminus[k][mu]).re
            }));
        }
        let bucket = bucket_of(&probs)?;
        let dbucket = std::array::from_fn(|mu| -dprobs.iter().map(|d: &Vec3| d[mu]).sum::<f64>());
        Ok(ChannelModel {
            n_channels: self.n_modes,
            probs,
            bucket,
            dprobs: Some(dprobs),
            dbucket: Some(dbucket),
            scene: *scene,
        })
    }

    /// Central-difference derivatives of `P_1 .. P_N`.
    pub fn finite_difference_derivatives(&self, scene: &SceneParams, step: f64) -> Vec<Vec3> {
        let mut out = vec![[0.0; 3]; self.n_modes];
        for mu in 0..3 {
            let mut hi = *scene;
            let mut lo = *scene;
            hi.l[mu] += step;
            lo.l[mu] -= step;
            let ph = self.raw_probabilities(&hi);
            let pl = self.raw_probabilities(&lo);
            for k in 0..self.n_modes {
                out[k][mu] = (ph[k] - pl[k]) / (2.0 * step);
            }
        }
        out
    }

    /// Central differences at `step` and `step/2` combined to cancel the
    /// `O(step^2)` truncation term.
    pub fn extrapolated_derivatives(&self, scene: &SceneParams, step: f64) -> Vec<Vec3> {
        let coarse = self.finite_difference_derivatives(scene, step);
        let fine = self.finite_difference_derivatives(scene, 0.5 * step);
        coarse
            .iter()
            .zip(&fine)
            .map(|(c, f)| [0, 1, 2].map(|mu| (4.0 * f[mu] - c[mu]) / 3.0))
            .collect()
    }

    /// Analytic derivatives, verified against extrapolated central differences.
    pub fn derivatives(&self, scene: &SceneParams) -> Result<ChannelModel> {
        let model = self.derivatives_unchecked(scene)?;
        let fd = self.extrapolated_derivatives(scene, DERIVATIVE_FD_STEP);
        let analytic = model.dprobs.as_ref().expect("derivatives present");
        for (k, (a_row, f_row)) in analytic.iter().zip(&fd).enumerate() {
            for mu in 0..3 {
                if relative_mismatch(a_row[mu], f_row[mu]) > DERIVATIVE_REL_TOL {
                    return Err(Error::DerivativeMismatch {
                        channel: k + 1,
                        axis: AXES[mu],
                        analytic: a_row[mu],
                        finite_difference: f_row[mu],
                    });
                }
            }
        }
        Ok(model)
    }
}

/// `|a - b| / max(|a|, 1e-6)`.
pub fn relative_mismatch(analytic: f64, reference: f64) -> f64 {
    (analytic - reference).abs() / analytic.abs().max(DERIVATIVE_ABS_FLOOR)
}

fn bucket_of(probs: &[f64]) -> Result<f64> {
    let total: f64 = probs.iter().sum();
    let bucket = 1.0 - total;
    if bucket < -BUCKET_SLACK
        || probs
            .iter()
            .any(|p| !(0.0..=1.0 + BUCKET_SLACK).contains(p))
    {
        return Err(Error::SimplexViolation(format!(
            "channel probabilities sum to {total}"
        )));
    }
    Ok(bucket.max(0.0))
}

pub fn channel_probabilities(
    pupil: &PupilFunction,
    basis: &ZernikeBasis,
    scene: &SceneParams,
) -> Result<ChannelModel> {
    ChannelEvaluator::new(pupil, basis).probabilities(scene)
}

pub fn channel_derivatives(
    pupil: &PupilFunction,
    basis: &ZernikeBasis,
    scene: &SceneParams,
) -> Result<ChannelModel> {
    ChannelEvaluator::new(pupil, basis).derivatives(scene)
}

/// Largest change of any channel probability under quadrature refinement.
pub fn channel_convergence(
    pupil: &PupilFunction,
    basis: &ZernikeBasis,
    scene: &SceneParams,
) -> f64 {
    let coarse = ChannelEvaluator::new(pupil, basis).raw_probabilities(scene);
    let fine = ChannelEvaluator::new(pupil.refined(), basis).raw_probabilities(scene);
    coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Classical Fisher information of multinomial channel counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    /// Per-photon information.
    pub j_ll: Matrix3<f64>,
    pub photons: f64,
    /// Channels (1-based; `N+1` is the bucket) dropped for being below
    /// [`PROBABILITY_FLOOR`].
    pub dropped: Vec<usize>,
}

impl FisherMatrix {
    /// Information carried by `photons` photons.
    pub fn total(&self) -> Matrix3<f64> {
        self.j_ll * self.photons
    }

    /// Classical CRB, the inverse of [`Self::total`].
    pub fn crb(&self) -> Result<BlockInverse> {
        invert_block(&self.total(), "J(ll)")
    }

    pub fn eigenvalues(&self) -> Vec3 {
        let e = self.total().symmetric_eigenvalues();
        let mut v = [e[0], e[1], e[2]];
        v.sort_by(f64::total_cmp);
        v
    }
}

/// `J/M = Σ_n (∂_μ P_n)(∂_ν P_n)/P_n + (∂_μ P̄)(∂_ν P̄)/P̄`.
pub fn classical_fi(model: &ChannelModel, photons: f64) -> Result<FisherMatrix> {
    let probs = model.full_probabilities();
    let derivs = model
        .full_derivatives()
        .ok_or_else(|| Error::SimplexViolation("channel model carries no derivatives".into()))?;
    let mut j = Matrix3::<f64>::zeros();
    let mut dropped = Vec::new();
    for (k, (p, d)) in probs.iter().zip(&derivs).enumerate() {
        if *p < PROBABILITY_FLOOR {
            dropped.push(k + 1);
            continue;
        }
        for m in 0..3 {
            for n in 0..3 {
                j[(m, n)] += d[m] * d[n] / p;
            }
        }
    }
    if dropped.len() == probs.len() {
        return Err(Error::AllChannelsBelowFloor {
            floor: PROBABILITY_FLOOR,
        });
    }
    if !dropped.is_empty() {
        log::warn!("channels {dropped:?} fall below the probability floor and were dropped");
    }
    Ok(FisherMatrix {
        j_ll: j,
        photons,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aperture::QuadratureSpec;

    fn setup(n: usize) -> (PupilFunction, ZernikeBasis) {
        (
            PupilFunction::clear_circular(QuadratureSpec::default()).unwrap(),
            ZernikeBasis::new(n).unwrap(),
        )
    }

    #[test]
    fn piston_at_zero_separation() {
        let (p, b) = setup(4);
        let m = channel_probabilities(&p, &b, &SceneParams::with_l([0.0; 3])).unwrap();
        assert!((m.probs[0] - 1.0).abs() < 1e-10);
        for k in 1..4 {
            assert!(m.probs[k].abs() < 1e-12);
        }
        assert!(m.bucket.abs() < 1e-10);
    }

    #[test]
    fn simplex_and_sum_rule() {
        let (p, b) = setup(4);
        let scene = SceneParams::new([0.2, 0.1, 0.05], [0.01, -0.02, 0.03]).unwrap();
        let m = channel_derivatives(&p, &b, &scene).unwrap();
        let total: f64 = m.full_probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(m
            .full_probabilities()
            .iter()
            .all(|p| (0.0..=1.0).contains(p)));
        let d = m.full_derivatives().unwrap();
        for mu in 0..3 {
            let s: f64 = d.iter().map(|r| r[mu]).sum();
            assert!(s.abs() < 1e-8);
        }
    }

    #[test]
    fn extra_channel_never_loses_information() {
        // Z5 is carved out of the bucket, so this is a refinement of the same measurement
        let (p, b4) = setup(4);
        let b5 = ZernikeBasis::new(5).unwrap();
        for l in [[0.2, 0.025, 0.025], [0.05, -0.3, 0.4], [0.6, 0.1, -1.2]] {
            let scene = SceneParams::new(l, [0.02, 0.0, -0.01]).unwrap();
            let j4 = classical_fi(&channel_derivatives(&p, &b4, &scene).unwrap(), 1.0).unwrap();
            let j5 = classical_fi(&channel_derivatives(&p, &b5, &scene).unwrap(), 1.0).unwrap();
            for mu in 0..3 {
                assert!(
                    j5.total()[(mu, mu)] >= j4.total()[(mu, mu)] - 1e-9,
                    "{l:?} {mu}"
                );
            }
        }
    }

    #[test]
    fn tilt_channel_grows_quadratically() {
        let (p, b) = setup(4);
        let m1 = channel_probabilities(&p, &b, &SceneParams::with_l([1e-3, 0.0, 0.0])).unwrap();
        let m2 = channel_probabilities(&p, &b, &SceneParams::with_l([2e-3, 0.0, 0.0])).unwrap();
        assert!((m2.probs[1] / m1.probs[1] - 4.0).abs() < 1e-4);
        assert!(m1.probs[2].abs() < 1e-14 && m2.probs[2].abs() < 1e-14);
    }

    #[test]
    fn symmetric_scene_swaps_tilt_channels() {
        let (p, b) = setup(4);
        let m = channel_derivatives(&p, &b, &SceneParams::with_l([0.15, 0.15, 0.0])).unwrap();
        let d = m.dprobs.unwrap();
        assert!((d[1][0] - d[2][1]).abs() < 1e-10);
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let (p, b) = setup(4);
        let ev = ChannelEvaluator::new(&p, &b);
        let scene = SceneParams::with_l([0.2, 0.1, 0.05]);
        let m = ev.derivatives(&scene).unwrap();
        let fd = ev.finite_difference_derivatives(&scene, DERIVATIVE_FD_STEP);
        for (a, f) in m.dprobs.unwrap().iter().zip(&fd) {
            for mu in 0..3 {
                assert!(relative_mismatch(a[mu], f[mu]) < 1e-5);
            }
        }
    }

    #[test]
    fn binomial_toy_matches_direct_expectation() {
        // one channel plus bucket: a binomial experiment with M = 3
        let (p0, dp) = (0.3, 0.7);
        let model = ChannelModel {
            n_channels: 1,
            probs: vec![p0],
            bucket: 1.0 - p0,
            dprobs: Some(vec![[dp, 0.0, 0.0]]),
            dbucket: Some([-dp, 0.0, 0.0]),
            scene: SceneParams::with_l([0.0; 3]),
        };
        let m = 3u32;
        let mut direct = 0.0;
        for k in 0..=m {
            let binom = [1.0, 3.0, 3.0, 1.0][k as usize];
            let prob = binom * p0.powi(k as i32) * (1.0 - p0).powi((m - k) as i32);
            let score = dp * (k as f64 / p0 - (m - k) as f64 / (1.0 - p0));
            direct += prob * score * score;
        }
        let fi = classical_fi(&model, f64::from(m)).unwrap();
        assert!((fi.total()[(0, 0)] - direct).abs() < 1e-12);
        let closed = 3.0 * dp * dp * (1.0 / p0 + 1.0 / (1.0 - p0));
        assert!((direct - closed).abs() < 1e-12);
    }

    #[test]
    fn flat_model_carries_no_information() {
        let model = ChannelModel {
            n_channels: 3,
            probs: vec![0.25; 3],
            bucket: 0.25,
            dprobs: Some(vec![[0.0; 3]; 3]),
            dbucket: Some([0.0; 3]),
            scene: SceneParams::with_l([0.0; 3]),
        };
        assert_eq!(
            classical_fi(&model, 100.0).unwrap().total(),
            Matrix3::zeros()
        );
    }

    #[test]
    fn all_channels_below_floor() {
        let model = ChannelModel {
            n_channels: 1,
            probs: vec![0.0],
            bucket: 0.0,
            dprobs: Some(vec![[0.0; 3]]),
            dbucket: Some([0.0; 3]),
            scene: SceneParams::with_l([0.0; 3]),
        };
        assert!(matches!(
            classical_fi(&model, 1.0),
            Err(Error::AllChannelsBelowFloor { .. })
        ));
    }

    #[test]
    fn axial_information_vanishes_near_zero_defocus() {
        // J_zz collapses like l_z^2 once l_z is well below |l⊥|^2
        let (p, b) = setup(4);
        let jzz = |lz: f64| {
            let m = channel_derivatives(&p, &b, &SceneParams::with_l([0.025, 0.025, lz])).unwrap();
            classical_fi(&m, 1.0).unwrap().j_ll[(2, 2)]
        };
        let (j4, j5) = (jzz(1e-4), jzz(1e-5));
        assert!(jzz(1e-3) > j4 && j4 > j5);
        assert!((j4 / j5 - 100.0).abs() < 1.0, "{j4} {j5}");
        assert!(j5 < 1e-3);
    }
}
