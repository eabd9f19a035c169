//! Pupil representation, unit-disk quadrature, and Zernike modes.
//!
//! Pupil coordinates are normalized so the aperture edge sits at `|u| = 1`.
//! Every [`PupilFunction`] carries its own quadrature rule and is rescaled on
//! construction so that the integral of `|P(u)|^2` over the disk is one. The
//! `|P|^2`-weighted sum over nodes is then the aperture average used by all
//! the Fisher-information formulas.

mod quadrature;
mod zernike;

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub use quadrature::{gauss_legendre, QuadratureSpec, MIN_ANGULAR, MIN_RADIAL};
pub use zernike::{noll_to_nm, ZernikeBasis, ZernikeMode};

/// Rescale factors further than this from one are logged.
const RESCALE_WARN: f64 = 1e-6;

/// A point in the normalized pupil plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AperturePoint {
    pub u_x: f64,
    pub u_y: f64,
}

impl AperturePoint {
    pub const fn new(u_x: f64, u_y: f64) -> Self {
        Self { u_x, u_y }
    }

    pub fn from_polar(r: f64, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(r * c, r * s)
    }

    /// `u^2 = u_x^2 + u_y^2`.
    #[inline]
    pub fn r2(&self) -> f64 {
        self.u_x * self.u_x + self.u_y * self.u_y
    }

    pub fn r(&self) -> f64 {
        self.r2().sqrt()
    }

    pub fn theta(&self) -> f64 {
        self.u_y.atan2(self.u_x)
    }
}

pub type Amplitude = Arc<dyn Fn(AperturePoint) -> Complex64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PupilKind {
    ClearCircular,
    UserSupplied,
}

/// Value of an integral together with its refinement error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    pub value: Complex64,
    pub est_error: f64,
}

/// A normalized pupil amplitude discretized on the unit disk.
pub struct PupilFunction {
    kind: PupilKind,
    spec: QuadratureSpec,
    amplitude: Amplitude,
    scale: f64,
    nodes: Vec<AperturePoint>,
    weights: Vec<f64>,
    values: Vec<Complex64>,
    intensity: Vec<f64>,
    refined: OnceLock<Box<PupilFunction>>,
}

impl fmt::Debug for PupilFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PupilFunction")
            .field("kind", &self.kind)
            .field("spec", &self.spec)
            .field("scale", &self.scale)
            .finish_non_exhaustive()
    }
}

impl PupilFunction {
    /// The clear unit-radius aperture, `P(u) = 1/sqrt(pi)` on the disk.
    pub fn clear_circular(spec: QuadratureSpec) -> Result<Self> {
        let amp = 1.0 / PI.sqrt();
        Self::build(
            PupilKind::ClearCircular,
            spec,
            Arc::new(move |_| Complex64::new(amp, 0.0)),
        )
    }

    /// Any complex amplitude over the disk. It is normalized automatically.
    pub fn user_supplied<F>(spec: QuadratureSpec, amplitude: F) -> Result<Self>
    where
        F: Fn(AperturePoint) -> Complex64 + Send + Sync + 'static,
    {
        Self::build(PupilKind::UserSupplied, spec, Arc::new(amplitude))
    }

    /// Gaussian apodization `exp(-u^2 / (2 sigma^2))` over the clear disk.
    pub fn gaussian_apodized(spec: QuadratureSpec, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidQuadrature(format!(
                "apodization width must be positive, got {sigma}"
            )));
        }
        let k = 0.5 / (sigma * sigma);
        // Disk energy of the unnormalized profile is pi sigma^2 (1 - e^{-1/sigma^2}).
        let amp = (PI * sigma * sigma * -(-1.0 / (sigma * sigma)).exp_m1())
            .sqrt()
            .recip();
        Self::user_supplied(spec, move |p| {
            Complex64::new(amp * (-k * p.r2()).exp(), 0.0)
        })
    }

    fn build(kind: PupilKind, spec: QuadratureSpec, amplitude: Amplitude) -> Result<Self> {
        spec.validate()?;
        let (nodes, weights) = quadrature::polar_rule(&spec);
        let mut values = Vec::with_capacity(nodes.len());
        for p in &nodes {
            let v = amplitude(*p);
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::NonFinite {
                    u_x: p.u_x,
                    u_y: p.u_y,
                });
            }
            values.push(v);
        }
        let energy: f64 = values
            .iter()
            .zip(&weights)
            .map(|(v, w)| w * v.norm_sqr())
            .sum();
        if !(energy > 0.0) {
            return Err(Error::EmptyPupil);
        }
        let scale = energy.sqrt().recip();
        if kind == PupilKind::UserSupplied && (scale - 1.0).abs() > RESCALE_WARN {
            log::warn!("user pupil rescaled by {scale:.6} to unit energy");
        }
        for v in &mut values {
            *v *= scale;
        }
        let intensity = values
            .iter()
            .zip(&weights)
            .map(|(v, w)| w * v.norm_sqr())
            .collect();
        Ok(Self {
            kind,
            spec,
            amplitude,
            scale,
            nodes,
            weights,
            values,
            intensity,
            refined: OnceLock::new(),
        })
    }

    pub fn kind(&self) -> PupilKind {
        self.kind
    }

    pub fn spec(&self) -> &QuadratureSpec {
        &self.spec
    }

    /// Factor applied to the supplied amplitude to reach unit energy.
    pub fn normalization_scale(&self) -> f64 {
        self.scale
    }

    /// Normalized amplitude at an arbitrary point; zero outside the disk.
    pub fn amplitude(&self, p: AperturePoint) -> Complex64 {
        if p.r2() > 1.0 {
            Complex64::new(0.0, 0.0)
        } else {
            (self.amplitude)(p) * self.scale
        }
    }

    pub fn nodes(&self) -> &[AperturePoint] {
        &self.nodes
    }

    /// Geometric area weights of the disk rule.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Normalized `P(node)`.
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// `weight * |P(node)|^2`; these sum to one.
    pub fn intensity_weights(&self) -> &[f64] {
        &self.intensity
    }

    /// `sum weight * |P|^2`.
    pub fn norm(&self) -> f64 {
        self.intensity.iter().sum()
    }

    /// The same amplitude on a rule refined by `refinement_factor`.
    pub fn refined(&self) -> &PupilFunction {
        self.refined.get_or_init(|| {
            let spec = self.spec.refined();
            let inner = Arc::clone(&self.amplitude);
            Box::new(
                Self::build(self.kind, spec, inner).expect("refining a valid pupil cannot fail"),
            )
        })
    }

    /// `|P|^2`-weighted average of `f` over the aperture.
    pub fn aperture_average<T, F>(&self, f: F) -> Result<Complex64>
    where
        T: Into<Complex64>,
        F: Fn(AperturePoint) -> T,
    {
        let mut acc = Complex64::new(0.0, 0.0);
        for (p, w) in self.nodes.iter().zip(&self.intensity) {
            let v: Complex64 = f(*p).into();
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::NonFinite {
                    u_x: p.u_x,
                    u_y: p.u_y,
                });
            }
            acc += v * *w;
        }
        Ok(acc)
    }

    /// Real-valued convenience over [`Self::aperture_average`].
    pub fn average_real<F: Fn(AperturePoint) -> f64>(&self, f: F) -> Result<f64> {
        self.aperture_average(f).map(|z| z.re)
    }

    /// Plain area integral of `f` over the unit disk (no pupil weight).
    pub fn disk_integral<T, F>(&self, f: F) -> Complex64
    where
        T: Into<Complex64>,
        F: Fn(AperturePoint) -> T,
    {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| f(*p).into() * *w)
            .sum()
    }

    /// Aperture average at this resolution and at the refined one.
    pub fn check_convergence<T, F>(&self, f: F) -> Result<Convergence>
    where
        T: Into<Complex64>,
        F: Fn(AperturePoint) -> T,
    {
        let value = self.aperture_average(&f)?;
        let fine = self.refined().aperture_average(&f)?;
        Ok(Convergence {
            value,
            est_error: (fine - value).norm(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clear() -> PupilFunction {
        PupilFunction::clear_circular(QuadratureSpec::default()).unwrap()
    }

    #[test]
    fn clear_pupil_is_normalized() {
        let p = clear();
        assert!((p.norm() - 1.0).abs() < 1e-10);
        let v = p.values()[17];
        assert!((v.norm_sqr() - 1.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn disk_moments() {
        let p = clear();
        let one = p.aperture_average(|_| 1.0).unwrap();
        assert!((one.re - 1.0).abs() < 1e-10 && one.im == 0.0);
        let ux = p.average_real(|q| q.u_x).unwrap();
        assert!(ux.abs() < 1e-10);
        let ux2 = p.average_real(|q| q.u_x * q.u_x).unwrap();
        assert!((ux2 - 0.25).abs() < 1e-9);
        let u2 = p.average_real(|q| q.r2()).unwrap();
        assert!((u2 - 0.5).abs() < 1e-9);
        let u4 = p.average_real(|q| q.r2() * q.r2()).unwrap();
        assert!((u4 - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_integrand_is_rejected() {
        let p = clear();
        let err = p
            .aperture_average(|q| if q.u_x > 0.5 { f64::NAN } else { 0.0 })
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn user_pupil_is_rescaled() {
        let spec = QuadratureSpec::new(40, 80).unwrap();
        let p = PupilFunction::user_supplied(spec, |_| Complex64::new(3.0, 4.0)).unwrap();
        assert!((p.norm() - 1.0).abs() < 1e-12);
        assert!((p.normalization_scale() - 1.0 / (5.0 * PI.sqrt())).abs() < 1e-12);
        assert_eq!(p.kind(), PupilKind::UserSupplied);
    }

    #[test]
    fn zero_pupil_is_rejected() {
        let spec = QuadratureSpec::new(8, 16).unwrap();
        let err = PupilFunction::user_supplied(spec, |_| Complex64::new(0.0, 0.0)).unwrap_err();
        assert_eq!(err, Error::EmptyPupil);
    }

    #[test]
    fn convergence_of_constant_integrand() {
        let c = clear().check_convergence(|_| 2.5).unwrap();
        assert!(c.est_error < 1e-12);
        assert!((c.value.re - 2.5).abs() < 1e-10);
    }

    #[test]
    fn convergence_flags_under_resolution() {
        let p = clear();
        let mild = p
            .check_convergence(|q| Complex64::from_polar(1.0, 4.0 * PI * q.u_x * 0.5))
            .unwrap();
        assert!(mild.est_error < 1e-8, "{}", mild.est_error);
        let wild = p
            .check_convergence(|q| Complex64::from_polar(1.0, 4.0 * PI * q.u_x * 20.0))
            .unwrap();
        assert!(wild.est_error > 1e-3, "{}", wild.est_error);
    }
}
