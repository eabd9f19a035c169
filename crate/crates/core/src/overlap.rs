//! Overlap of the two single-photon states and the wavefunction matrix
//! elements that feed the centroid QFI.
//!
//! Over the aperture the two emission states are
//! `K±(u) = exp(±i phi0) P(u) exp(-i g(u)·s) exp(∓i g(u)·l)` with the phase
//! gradient `g(u) = (2π u_x, 2π u_y, π u^2)`. Everything here is a
//! `|P|^2`-weighted aperture sum over that form.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::aperture::{AperturePoint, PupilFunction};
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Scenes with `1 - delta^2` at or below this are treated as a single source.
pub const DEGENERACY_THRESHOLD: f64 = 1e-9;
/// Refinement tolerance applied to the overlap integral.
pub const OVERLAP_CONVERGENCE_TOL: f64 = 1e-8;
/// Step of the finite-difference route to `B`.
pub const OVERLAP_FD_STEP: f64 = 1e-5;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Separation `l` and centroid `s`, in normalized diffraction units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub l: Vec3,
    pub s: Vec3,
}

impl SceneParams {
    pub fn new(l: Vec3, s: Vec3) -> Result<Self> {
        if l.iter().chain(&s).all(|v| v.is_finite()) {
            Ok(Self { l, s })
        } else {
            Err(Error::NonFinite {
                u_x: f64::NAN,
                u_y: f64::NAN,
            })
        }
    }

    pub fn with_l(l: Vec3) -> Self {
        Self { l, s: [0.0; 3] }
    }

    pub fn with_s(&self, s: Vec3) -> Self {
        Self { l: self.l, s }
    }
}

/// Gradient of the pair phase `Psi(u; l)` with respect to `l`; the centroid
/// phase has the same gradient with respect to `s`.
#[inline]
pub fn phase_gradient(p: AperturePoint) -> Vec3 {
    [2.0 * PI * p.u_x, 2.0 * PI * p.u_y, PI * p.r2()]
}

#[inline]
pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapResult {
    /// `<exp(i 4π l⊥·u + i 2π l_z u^2)>`.
    pub raw_integral: Complex64,
    pub delta: f64,
    pub phi0: f64,
    /// Refinement error estimate of `raw_integral`.
    pub est_error: f64,
}

impl OverlapResult {
    fn from_raw(raw_integral: Complex64, est_error: f64) -> Self {
        let delta = raw_integral.norm();
        let mut phi0 = 0.5 * raw_integral.arg();
        if phi0 <= -FRAC_PI_2 {
            phi0 += PI;
        }
        Self {
            raw_integral,
            delta,
            phi0,
            est_error,
        }
    }

    pub fn one_minus_delta_sq(&self) -> f64 {
        1.0 - self.delta * self.delta
    }

    pub fn is_degenerate(&self) -> bool {
        self.one_minus_delta_sq() <= DEGENERACY_THRESHOLD
    }

    pub fn ensure_nondegenerate(&self) -> Result<()> {
        if self.is_degenerate() {
            Err(Error::Degenerate {
                one_minus_delta_sq: self.one_minus_delta_sq(),
                threshold: DEGENERACY_THRESHOLD,
            })
        } else {
            Ok(())
        }
    }

    /// The other admissible phase branch: `phi0 + π/2`, which negates delta.
    pub fn flip_branch(&self) -> Self {
        Self {
            delta: -self.delta,
            phi0: self.phi0 + FRAC_PI_2,
            ..*self
        }
    }
}

/// `<exp(2i g·l)>` without the refinement check.
pub fn overlap_integral(pupil: &PupilFunction, l: &Vec3) -> Complex64 {
    let mut acc = ZERO;
    for (p, w) in pupil.nodes().iter().zip(pupil.intensity_weights()) {
        let chi = 2.0 * dot(&phase_gradient(*p), l);
        let (s, c) = chi.sin_cos();
        acc += Complex64::new(c, s) * *w;
    }
    acc
}

/// Delta and phi0 for `scene`, with the integral verified against the
/// refined quadrature.
pub fn compute_overlap(pupil: &PupilFunction, scene: &SceneParams) -> Result<OverlapResult> {
    let raw = overlap_integral(pupil, &scene.l);
    let fine = overlap_integral(pupil.refined(), &scene.l);
    let est_error = (fine - raw).norm();
    if est_error > OVERLAP_CONVERGENCE_TOL {
        return Err(Error::Oscillation {
            est_error,
            tolerance: OVERLAP_CONVERGENCE_TOL,
        });
    }
    Ok(OverlapResult::from_raw(raw, est_error))
}

/// Wavefunction matrix elements over the aperture.
///
/// * `a[μ] = <K+|∂s_μ|K+>`
/// * `b[μ] = <K+|∂s_μ|K->`
/// * `c[μν] = (∂s_μ <K+|) ∂s_ν |K+>`
/// * `g[μ] = -i <∂Psi/∂l_μ>`
///
/// `dphi0` and `ddelta` are the separation gradients of the phase constant
/// and of delta. `<K+|∂l_μ|K+>` is `g[μ] + i dphi0[μ]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixElements {
    pub a: [Complex64; 3],
    pub b: [Complex64; 3],
    pub c: Matrix3<f64>,
    pub g: [Complex64; 3],
    pub dphi0: Vec3,
    pub ddelta: Vec3,
}

impl MatrixElements {
    /// Elements on the `phi0 + π/2` branch: `B` changes sign.
    pub fn flip_branch(&self) -> Self {
        Self {
            b: self.b.map(|b| -b),
            ddelta: self.ddelta.map(|d| -d),
            ..*self
        }
    }

    /// `<K+|∂l_μ|K+>` including the variation of `phi0`.
    pub fn k_plus_dl_k_plus(&self) -> [Complex64; 3] {
        std::array::from_fn(|m| self.g[m] + I * self.dphi0[m])
    }
}

pub fn compute_matrix_elements(
    pupil: &PupilFunction,
    scene: &SceneParams,
    overlap: &OverlapResult,
) -> Result<MatrixElements> {
    let mut mean_g = [0.0; 3];
    let mut mean_gg = Matrix3::<f64>::zeros();
    let mut mixed = [ZERO; 3];
    for (p, w) in pupil.nodes().iter().zip(pupil.intensity_weights()) {
        let g = phase_gradient(*p);
        let chi = 2.0 * dot(&g, &scene.l);
        let (s, c) = chi.sin_cos();
        let e = Complex64::new(c, s) * *w;
        for m in 0..3 {
            mean_g[m] += w * g[m];
            mixed[m] += e * g[m];
            for n in m..3 {
                mean_gg[(m, n)] += w * g[m] * g[n];
            }
        }
    }
    for m in 0..3 {
        for n in 0..m {
            mean_gg[(m, n)] = mean_gg[(n, m)];
        }
    }
    let branch = Complex64::from_polar(1.0, -2.0 * overlap.phi0);
    let a = mean_g.map(|v| -I * v);
    let b = mixed.map(|v| branch * (-I) * v);
    // d(raw)/dl_μ = 2i <g_μ e^{iχ}>
    let raw = overlap.raw_integral;
    let draw = mixed.map(|v| 2.0 * I * v);
    let dphi0 = draw.map(|d| 0.5 * (d / raw).im);
    let ddelta = draw.map(|d| (branch * d).re);
    let elements = MatrixElements {
        a,
        b,
        c: mean_gg,
        g: a,
        dphi0,
        ddelta,
    };
    Ok(elements)
}

/// `B_μ = -(1/2) e^{-2i phi0} ∂l_μ <e^{iχ}>` by central differences.
pub fn b_via_overlap_derivative(
    pupil: &PupilFunction,
    scene: &SceneParams,
    overlap: &OverlapResult,
    step: f64,
) -> [Complex64; 3] {
    let branch = Complex64::from_polar(1.0, -2.0 * overlap.phi0);
    std::array::from_fn(|m| {
        let mut hi = scene.l;
        let mut lo = scene.l;
        hi[m] += step;
        lo[m] -= step;
        let d = (overlap_integral(pupil, &hi) - overlap_integral(pupil, &lo)) / (2.0 * step);
        -0.5 * branch * d
    })
}

/// The two eigenvectors of the density operator sampled on the quadrature
/// nodes, together with their centroid and separation derivatives.
///
/// Vectors hold amplitudes at nodes; inner products use the geometric disk
/// weights. Separation derivatives are taken by a nine-point stencil on the
/// full construction (delta and phi0 recomputed), so they are independent of
/// the closed forms in [`MatrixElements`].
#[derive(Debug, Clone)]
pub struct EigenStates {
    pub weights: Vec<f64>,
    pub delta: f64,
    /// `[e+, e-]`
    pub states: [Vec<Complex64>; 2],
    /// `ds[i][μ] = ∂s_μ |e_i>`
    pub ds: [[Vec<Complex64>; 3]; 2],
    /// `dl[i][μ] = ∂l_μ |e_i>`
    pub dl: [[Vec<Complex64>; 3]; 2],
    /// `[K+, K-]` and their centroid derivatives.
    pub k: [Vec<Complex64>; 2],
    pub dk_s: [[Vec<Complex64>; 3]; 2],
}

const EIGEN_FD_STEP: f64 = 1e-3;

/// Eighth-order central-difference weights for offsets `1..=4` (odd
/// antisymmetric, so offsets `-k` take the negated weight).
const STENCIL: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];

/// Stencil step for the separation derivatives of the eigenstates.
///
/// Near `delta = 0` the two eigenvalues meet and the eigenbasis turns on a
/// length scale `|delta| / |∂raw|` (with `|∂raw| <= 2 max|∇Psi| < 15`), so
/// the step shrinks with `|delta|`; the high-order stencil keeps truncation
/// negligible at that step while round-off stays near 1e-9 down to
/// `|delta| ~ 1e-3`. Scenes with much smaller `|delta|` remain
/// ill-conditioned for this check.
fn eigen_fd_step(delta: f64) -> f64 {
    EIGEN_FD_STEP.min(1e-2 * delta.abs()).max(1e-8)
}

/// `K±` at `scene`, with `phi0` continued from `reference` (centre raw
/// integral and its phase) when given, so that stencil neighbours never
/// jump to the other square-root branch.
fn emission_states(
    pupil: &PupilFunction,
    scene: &SceneParams,
    reference: Option<(Complex64, f64)>,
) -> (Complex64, f64, [Vec<Complex64>; 2]) {
    let raw = overlap_integral(pupil, &scene.l);
    let phi0 = match reference {
        Some((raw0, phi00)) => phi00 + 0.5 * (raw / raw0).arg(),
        None => OverlapResult::from_raw(raw, 0.0).phi0,
    };
    let n = pupil.nodes().len();
    let mut plus = Vec::with_capacity(n);
    let mut minus = Vec::with_capacity(n);
    for (p, v) in pupil.nodes().iter().zip(pupil.values()) {
        let g = phase_gradient(*p);
        let centroid = *v * Complex64::from_polar(1.0, -dot(&g, &scene.s));
        let psi = dot(&g, &scene.l);
        plus.push(centroid * Complex64::from_polar(1.0, phi0 - psi));
        minus.push(centroid * Complex64::from_polar(1.0, -phi0 + psi));
    }
    (raw, phi0, [plus, minus])
}

fn eigenvectors(delta: f64, k: &[Vec<Complex64>; 2]) -> [Vec<Complex64>; 2] {
    let np = (2.0 * (1.0 + delta)).sqrt().recip();
    let nm = (2.0 * (1.0 - delta)).sqrt().recip();
    let plus = k[0].iter().zip(&k[1]).map(|(a, b)| (a + b) * np).collect();
    let minus = k[0].iter().zip(&k[1]).map(|(a, b)| (a - b) * nm).collect();
    [plus, minus]
}

impl EigenStates {
    pub fn new(pupil: &PupilFunction, scene: &SceneParams) -> Result<Self> {
        let (raw, phi0, k) = emission_states(pupil, scene, None);
        let delta = raw.norm();
        let one_minus = 1.0 - delta * delta;
        if one_minus <= DEGENERACY_THRESHOLD {
            return Err(Error::Degenerate {
                one_minus_delta_sq: one_minus,
                threshold: DEGENERACY_THRESHOLD,
            });
        }
        let states = eigenvectors(delta, &k);
        let grads: Vec<Vec3> = pupil.nodes().iter().map(|p| phase_gradient(*p)).collect();
        let times_grad = |v: &[Complex64], m: usize| -> Vec<Complex64> {
            v.iter()
                .zip(&grads)
                .map(|(a, g)| a * Complex64::new(0.0, -g[m]))
                .collect()
        };
        let ds = [0, 1].map(|i| [0, 1, 2].map(|m| times_grad(&states[i], m)));
        let dk_s = [0, 1].map(|i| [0, 1, 2].map(|m| times_grad(&k[i], m)));

        let h = eigen_fd_step(delta);
        let mut dl: [[Vec<Complex64>; 3]; 2] = Default::default();
        for m in 0..3 {
            let shifted = |t: f64| {
                let mut sc = *scene;
                sc.l[m] += t;
                let (r, _, kk) = emission_states(pupil, &sc, Some((raw, phi0)));
                eigenvectors(r.norm(), &kk)
            };
            let pairs: Vec<_> = (1..=4)
                .map(|k| (shifted(k as f64 * h), shifted(-(k as f64) * h)))
                .collect();
            for i in 0..2 {
                dl[i][m] = (0..states[i].len())
                    .map(|j| {
                        pairs
                            .iter()
                            .zip(STENCIL)
                            .map(|((hi, lo), c)| (hi[i][j] - lo[i][j]) * c)
                            .sum::<Complex64>()
                            / h
                    })
                    .collect();
            }
        }
        Ok(Self {
            weights: pupil.weights().to_vec(),
            delta,
            states,
            ds,
            dl,
            k,
            dk_s,
        })
    }

    /// `sum w conj(a) b`.
    pub fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        a.iter()
            .zip(b)
            .zip(&self.weights)
            .map(|((a, b), w)| a.conj() * b * *w)
            .sum()
    }

    /// Eigenvalues `[(1+delta)/2, (1-delta)/2]`.
    pub fn eigenvalues(&self) -> [f64; 2] {
        [0.5 * (1.0 + self.delta), 0.5 * (1.0 - self.delta)]
    }
}

/// Residuals of the eigenstate identities, each the largest absolute
/// discrepancy over the three axes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IdentityReport {
    /// `<e+|∂s|e+> = (A + i Im B)/(1 + delta)`
    pub plus_ds_plus: f64,
    /// `<e-|∂s|e-> = (A - i Im B)/(1 - delta)`
    pub minus_ds_minus: f64,
    /// `<e-|∂s|e+> = Re B / sqrt(1 - delta^2) = -<e+|∂s|e->`
    pub cross_ds: f64,
    /// `<e±|∂l|e±> = 0`
    pub diag_dl: f64,
    /// `<e∓|∂l|e±> = <K+|∂l|K+> / sqrt(1 - delta^2)`
    pub cross_dl: f64,
    /// `<K+|∂s|K-> = -conj(<K-|∂s|K+>)`
    pub hermiticity: f64,
    /// Largest `|Im <e-|∂s|e+>|`.
    pub im_cross_ds: f64,
    /// Largest `|Re <e∓|∂l|e±>|`.
    pub re_cross_dl: f64,
}

impl IdentityReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.plus_ds_plus,
            self.minus_ds_minus,
            self.cross_ds,
            self.diag_dl,
            self.cross_dl,
            self.hermiticity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Compares eigenstate matrix elements formed directly on the nodes with
/// the closed forms built from [`MatrixElements`].
pub fn eigen_identities_check(
    pupil: &PupilFunction,
    scene: &SceneParams,
) -> Result<IdentityReport> {
    let overlap = compute_overlap(pupil, scene)?;
    overlap.ensure_nondegenerate()?;
    let el = compute_matrix_elements(pupil, scene, &overlap)?;
    let eig = EigenStates::new(pupil, scene)?;
    let d = overlap.delta;
    let root = (1.0 - d * d).sqrt();
    let kdl = el.k_plus_dl_k_plus();
    let [ep, em] = &eig.states;

    let mut r = IdentityReport::default();
    let upd = |slot: &mut f64, got: Complex64, want: Complex64| {
        *slot = slot.max((got - want).norm());
    };
    for m in 0..3 {
        let (a, b) = (el.a[m], el.b[m]);
        upd(
            &mut r.plus_ds_plus,
            eig.inner(ep, &eig.ds[0][m]),
            (a + I * b.im) / (1.0 + d),
        );
        upd(
            &mut r.minus_ds_minus,
            eig.inner(em, &eig.ds[1][m]),
            (a - I * b.im) / (1.0 - d),
        );
        let mp = eig.inner(em, &eig.ds[0][m]);
        let pm = eig.inner(ep, &eig.ds[1][m]);
        upd(&mut r.cross_ds, mp, Complex64::from(b.re / root));
        upd(&mut r.cross_ds, pm, Complex64::from(-b.re / root));
        r.im_cross_ds = r.im_cross_ds.max(mp.im.abs());

        upd(&mut r.diag_dl, eig.inner(ep, &eig.dl[0][m]), ZERO);
        upd(&mut r.diag_dl, eig.inner(em, &eig.dl[1][m]), ZERO);
        let mp_l = eig.inner(em, &eig.dl[0][m]);
        let pm_l = eig.inner(ep, &eig.dl[1][m]);
        upd(&mut r.cross_dl, mp_l, kdl[m] / root);
        upd(&mut r.cross_dl, pm_l, kdl[m] / root);
        r.re_cross_dl = r.re_cross_dl.max(mp_l.re.abs()).max(pm_l.re.abs());

        let kp_ds_km = eig.inner(&eig.k[0], &eig.dk_s[1][m]);
        let km_ds_kp = eig.inner(&eig.k[1], &eig.dk_s[0][m]);
        upd(&mut r.hermiticity, kp_ds_km, -km_ds_kp.conj());
        upd(&mut r.hermiticity, kp_ds_km, b);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aperture::QuadratureSpec;

    fn clear() -> PupilFunction {
        PupilFunction::clear_circular(QuadratureSpec::default()).unwrap()
    }

    #[test]
    fn zero_separation_has_unit_overlap() {
        let p = clear();
        let ov = compute_overlap(&p, &SceneParams::with_l([0.0; 3])).unwrap();
        assert!((ov.delta - 1.0).abs() < 1e-12);
        assert_eq!(ov.phi0, 0.0);
        assert!(ov.is_degenerate());
        assert!(matches!(
            ov.ensure_nondegenerate(),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn phase_convention_makes_overlap_real() {
        let p = clear();
        let ov = compute_overlap(&p, &SceneParams::with_l([0.13, -0.4, 0.7])).unwrap();
        let rotated = Complex64::from_polar(1.0, -2.0 * ov.phi0) * ov.raw_integral;
        assert!(rotated.im.abs() < 1e-12);
        assert!(rotated.re >= 0.0);
        assert!((rotated.re - ov.delta).abs() < 1e-12);
        assert!(ov.phi0 > -FRAC_PI_2 && ov.phi0 <= FRAC_PI_2);
    }

    #[test]
    fn under_resolved_overlap_errors() {
        let coarse = PupilFunction::clear_circular(QuadratureSpec::new(8, 16).unwrap()).unwrap();
        let err = compute_overlap(&coarse, &SceneParams::with_l([1.5, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Oscillation { .. }));
    }

    #[test]
    fn clear_pupil_elements() {
        let p = clear();
        let scene = SceneParams::new([0.2, 0.1, 0.3], [0.05, -0.02, 0.1]).unwrap();
        let ov = compute_overlap(&p, &scene).unwrap();
        let el = compute_matrix_elements(&p, &scene, &ov).unwrap();
        assert!(el.a[0].im.abs() < 1e-10);
        assert!((el.a[2].im + FRAC_PI_2).abs() < 1e-10);
        for m in 0..3 {
            assert_eq!(el.a[m].re, 0.0);
            assert_eq!(el.g[m].re, 0.0);
        }
        let want = [PI * PI, PI * PI, PI * PI / 3.0];
        for m in 0..3 {
            for n in 0..3 {
                let w = if m == n { want[m] } else { 0.0 };
                assert!((el.c[(m, n)] - w).abs() < 1e-9, "C[{m}{n}]");
            }
        }
    }

    #[test]
    fn b_equals_a_at_zero_separation() {
        let p = clear();
        let scene = SceneParams::with_l([0.0; 3]);
        let ov = compute_overlap(&p, &scene).unwrap();
        let el = compute_matrix_elements(&p, &scene, &ov).unwrap();
        for m in 0..3 {
            assert!((el.b[m] - el.a[m]).norm() < 1e-14);
        }
    }

    #[test]
    fn b_routes_agree() {
        let p = clear();
        for l in [[0.3, 0.2, 0.1], [-0.7, 0.05, 1.2], [0.01, 0.9, -0.4]] {
            let scene = SceneParams::with_l(l);
            let ov = compute_overlap(&p, &scene).unwrap();
            let el = compute_matrix_elements(&p, &scene, &ov).unwrap();
            let fd = b_via_overlap_derivative(&p, &scene, &ov, OVERLAP_FD_STEP);
            for m in 0..3 {
                assert!((fd[m] - el.b[m]).norm() < 1e-7, "{l:?} axis {m}");
            }
        }
    }

    #[test]
    fn identities_hold_at_a_generic_scene() {
        let p = clear();
        let scene = SceneParams::new([0.3, 0.2, 0.1], [0.4, -0.1, 0.7]).unwrap();
        let r = eigen_identities_check(&p, &scene).unwrap();
        assert!(r.max_residual() < 1e-8, "{r:?}");
        assert!(r.im_cross_ds < 1e-8);
        assert!(r.re_cross_dl < 1e-8);
    }

    #[test]
    fn identities_refuse_degenerate_scene() {
        let p = clear();
        let scene = SceneParams::with_l([1e-7, 0.0, 0.0]);
        assert!(matches!(
            eigen_identities_check(&p, &scene),
            Err(Error::Degenerate { .. })
        ));
    }
}
