//! QFI blocks for joint separation/centroid estimation and their inverses.

use nalgebra::{Matrix3, Matrix6};
use rayon::prelude::*;

use crate::aperture::PupilFunction;
use crate::error::{Error, Result};
use crate::overlap::{
    compute_matrix_elements, compute_overlap, phase_gradient, EigenStates, MatrixElements,
    SceneParams, Vec3, DEGENERACY_THRESHOLD,
};

/// Blocks whose smallest eigenvalue is at or below this are not inverted.
pub const SINGULAR_EIGENVALUE: f64 = 1e-10;

/// `H(ll)_μν = 4 [<∂Psi_μ ∂Psi_ν> - <∂Psi_μ><∂Psi_ν>]`.
///
/// The pair phase is linear in `l`, so this block depends on the pupil only.
pub fn compute_h_ll(pupil: &PupilFunction) -> Matrix3<f64> {
    let mut mean = [0.0; 3];
    let mut second = Matrix3::<f64>::zeros();
    for (p, w) in pupil.nodes().iter().zip(pupil.intensity_weights()) {
        let g = phase_gradient(*p);
        for m in 0..3 {
            mean[m] += w * g[m];
            for n in m..3 {
                second[(m, n)] += w * g[m] * g[n];
            }
        }
    }
    Matrix3::from_fn(|m, n| {
        let (i, j) = if m <= n { (m, n) } else { (n, m) };
        4.0 * (second[(i, j)] - mean[i] * mean[j])
    })
}

/// Centroid block from the wavefunction matrix elements and the overlap.
pub fn compute_h_ss(el: &MatrixElements, delta: f64) -> Result<Matrix3<f64>> {
    let one_minus = 1.0 - delta * delta;
    if one_minus <= DEGENERACY_THRESHOLD {
        return Err(Error::Degenerate {
            one_minus_delta_sq: one_minus,
            threshold: DEGENERACY_THRESHOLD,
        });
    }
    let (a, b) = (&el.a, &el.b);
    Ok(Matrix3::from_fn(|m, n| {
        let kinetic = 4.0 * (el.c[(m, n)] - b[m].re * b[n].re);
        let imag = -4.0 / one_minus * (a[m].im * a[n].im + b[m].im * b[n].im);
        let cross = 4.0 * delta / one_minus * (a[m].im * b[n].im + a[n].im * b[m].im);
        kinetic + imag + cross
    }))
}

/// Centroid block of `scene` straight from the pupil.
pub fn h_ss_for_scene(pupil: &PupilFunction, scene: &SceneParams) -> Result<(Matrix3<f64>, f64)> {
    let overlap = compute_overlap(pupil, scene)?;
    overlap.ensure_nondegenerate()?;
    let el = compute_matrix_elements(pupil, scene, &overlap)?;
    Ok((compute_h_ss(&el, overlap.delta)?, overlap.delta))
}

/// Largest change in `H(ss)` when the opposite sign of `Δ` (with `φ0`
/// shifted by `π/2`) is used to build the eigenstates.
pub fn branch_flip_residual(pupil: &PupilFunction, scene: &SceneParams) -> Result<f64> {
    let overlap = compute_overlap(pupil, scene)?;
    let el = compute_matrix_elements(pupil, scene, &overlap)?;
    let h = compute_h_ss(&el, overlap.delta)?;
    let flipped = overlap.flip_branch();
    let el_f = compute_matrix_elements(pupil, scene, &flipped)?;
    let h_f = compute_h_ss(&el_f, flipped.delta)?;
    Ok((h - h_f).abs().max())
}

/// Numerical value of the mixed centroid/separation block.
#[derive(Debug, Clone, PartialEq)]
pub struct HslResidual {
    pub matrix: Matrix3<f64>,
    pub max_abs: f64,
    /// Largest `|Re <e∓|∂l|e±>|`; these elements are purely imaginary.
    pub max_re_cross_dl: f64,
}

/// Evaluates the mixed block from eigenstate quadrature:
/// `4(1-Δ²) Re Σ_{i≠j} e_i <e_i|∂s_μ|e_j><e_j|∂l_ν|e_i> + 4 Re Σ_i e_i (∂s_μ<e_i|) ∂l_ν|e_i>`.
pub fn compute_h_sl_residual(pupil: &PupilFunction, scene: &SceneParams) -> Result<HslResidual> {
    let eig = EigenStates::new(pupil, scene)?;
    Ok(h_sl_from_eigenstates(&eig))
}

pub fn h_sl_from_eigenstates(eig: &EigenStates) -> HslResidual {
    let ev = eig.eigenvalues();
    let d = eig.delta;
    let mut matrix = Matrix3::zeros();
    let mut max_re_cross_dl: f64 = 0.0;
    for m in 0..3 {
        for n in 0..3 {
            let mut first = 0.0;
            let mut second = 0.0;
            for i in 0..2 {
                let j = 1 - i;
                let ds = eig.inner(&eig.states[i], &eig.ds[j][m]);
                let dl = eig.inner(&eig.states[j], &eig.dl[i][n]);
                max_re_cross_dl = max_re_cross_dl.max(dl.re.abs());
                first += ev[i] * (ds * dl).re;
                second += ev[i] * eig.inner(&eig.ds[i][m], &eig.dl[i][n]).re;
            }
            matrix[(m, n)] = 4.0 * (1.0 - d * d) * first + 4.0 * second;
        }
    }
    HslResidual {
        max_abs: matrix.abs().max(),
        matrix,
        max_re_cross_dl,
    }
}

/// Centroid block from the generic eigenstate expression
/// `4(1-Δ²) Re Σ_{i≠j} e_i <e_i|∂_μ|e_j><e_j|∂_ν|e_i>
///  + 4 Re Σ_i e_i [<e_i|∂_μ|e_i><e_i|∂_ν|e_i> + (∂_μ<e_i|) ∂_ν|e_i>]`,
/// used to cross-check [`compute_h_ss`].
pub fn h_ss_from_eigenstates(eig: &EigenStates) -> Matrix3<f64> {
    let ev = eig.eigenvalues();
    let d = eig.delta;
    Matrix3::from_fn(|m, n| {
        let mut first = 0.0;
        let mut second = 0.0;
        for i in 0..2 {
            let j = 1 - i;
            let a = eig.inner(&eig.states[i], &eig.ds[j][m]);
            let b = eig.inner(&eig.states[j], &eig.ds[i][n]);
            first += ev[i] * (a * b).re;
            let dm = eig.inner(&eig.states[i], &eig.ds[i][m]);
            let dn = eig.inner(&eig.states[i], &eig.ds[i][n]);
            second += ev[i] * (dm * dn + eig.inner(&eig.ds[i][m], &eig.ds[i][n])).re;
        }
        4.0 * (1.0 - d * d) * first + 4.0 * second
    })
}

/// Closed-form 3×3 inverse with a condition-number estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockInverse {
    pub inverse: Matrix3<f64>,
    pub min_eigenvalue: f64,
    pub condition: f64,
}

pub fn invert_block(block: &Matrix3<f64>, name: &'static str) -> Result<BlockInverse> {
    let sym = 0.5 * (block + block.transpose());
    let eigs = sym.symmetric_eigenvalues();
    let min_eigenvalue = eigs.min();
    if !(min_eigenvalue > SINGULAR_EIGENVALUE) {
        return Err(Error::SingularBlock {
            block: name,
            min_eigenvalue,
        });
    }
    let m = block;
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
        m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)]
    };
    // adjugate = transpose of the cofactor matrix
    let adj = Matrix3::new(
        cof(1, 2, 1, 2),
        -cof(0, 2, 1, 2),
        cof(0, 1, 1, 2),
        -cof(1, 2, 0, 2),
        cof(0, 2, 0, 2),
        -cof(0, 1, 0, 2),
        cof(1, 2, 0, 1),
        -cof(0, 2, 0, 1),
        cof(0, 1, 0, 1),
    );
    let det = m[(0, 0)] * adj[(0, 0)] + m[(0, 1)] * adj[(1, 0)] + m[(0, 2)] * adj[(2, 0)];
    Ok(BlockInverse {
        inverse: adj / det,
        min_eigenvalue,
        condition: eigs.max() / min_eigenvalue,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcrbResult {
    pub qcrb_ll: Matrix3<f64>,
    pub qcrb_ss: Matrix3<f64>,
    pub condition_ll: f64,
    pub condition_ss: f64,
}

impl QcrbResult {
    pub fn ll_diagonal(&self) -> Vec3 {
        [
            self.qcrb_ll[(0, 0)],
            self.qcrb_ll[(1, 1)],
            self.qcrb_ll[(2, 2)],
        ]
    }

    pub fn ss_diagonal(&self) -> Vec3 {
        [
            self.qcrb_ss[(0, 0)],
            self.qcrb_ss[(1, 1)],
            self.qcrb_ss[(2, 2)],
        ]
    }

    /// The full 6×6 bound, ordered `(l_x, l_y, l_z, s_x, s_y, s_z)`.
    pub fn full(&self) -> Matrix6<f64> {
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.qcrb_ll);
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.qcrb_ss);
        out
    }
}

/// Block-diagonal inversion of the QFI; the mixed block vanishes.
pub fn assemble_and_invert(h_ll: &Matrix3<f64>, h_ss: &Matrix3<f64>) -> Result<QcrbResult> {
    let ll = invert_block(h_ll, "H(ll)")?;
    let ss = invert_block(h_ss, "H(ss)")?;
    Ok(QcrbResult {
        qcrb_ll: ll.inverse,
        qcrb_ss: ss.inverse,
        condition_ll: ll.condition,
        condition_ss: ss.condition,
    })
}

/// All QFI blocks at one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct QfiBlocks {
    pub h_ll: Matrix3<f64>,
    pub h_ss: Matrix3<f64>,
    pub h_sl: Matrix3<f64>,
    pub delta: f64,
    pub scene: SceneParams,
}

impl QfiBlocks {
    /// Computes every block; the mixed block is evaluated numerically.
    pub fn compute(pupil: &PupilFunction, scene: &SceneParams) -> Result<Self> {
        let (h_ss, delta) = h_ss_for_scene(pupil, scene)?;
        let h_sl = compute_h_sl_residual(pupil, scene)?.matrix;
        Ok(Self {
            h_ll: compute_h_ll(pupil),
            h_ss,
            h_sl,
            delta,
            scene: *scene,
        })
    }

    /// The 6×6 QFI ordered `(l_x, l_y, l_z, s_x, s_y, s_z)`.
    pub fn full(&self) -> Matrix6<f64> {
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.h_ll);
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.h_ss);
        out.fixed_view_mut::<3, 3>(3, 0).copy_from(&self.h_sl);
        out.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&self.h_sl.transpose());
        out
    }

    pub fn qcrb(&self) -> Result<QcrbResult> {
        assemble_and_invert(&self.h_ll, &self.h_ss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn name(self) -> char {
        ['x', 'y', 'z'][self.index()]
    }
}

impl std::str::FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(format!("unknown axis `{other}` (expected x, y or z)")),
        }
    }
}

/// One separation component swept over `values`, the others held at `fixed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub fixed: Vec3,
}

impl Sweep {
    /// Inclusive `start..=stop` in increments of `step`.
    pub fn range(axis: Axis, start: f64, stop: f64, step: f64, fixed: Vec3) -> Self {
        let n = if step > 0.0 && stop >= start {
            ((stop - start) / step + 1e-9).floor() as usize + 1
        } else {
            0
        };
        Self {
            axis,
            values: (0..n).map(|k| start + k as f64 * step).collect(),
            fixed,
        }
    }

    pub fn point(&self, k: usize) -> Vec3 {
        let mut l = self.fixed;
        l[self.axis.index()] = self.values[k];
        l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowFlag {
    Ok,
    Degenerate,
    Unresolved,
    Singular,
}

impl RowFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            RowFlag::Ok => "ok",
            RowFlag::Degenerate => "degenerate",
            RowFlag::Unresolved => "unresolved",
            RowFlag::Singular => "singular",
        }
    }

    fn from_error(e: &Error) -> Self {
        match e {
            Error::Degenerate { .. } => RowFlag::Degenerate,
            Error::Oscillation { .. } => RowFlag::Unresolved,
            _ => RowFlag::Singular,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub l: Vec3,
    pub delta: Option<f64>,
    /// Diagonal of the centroid QCRB, absent for flagged rows.
    pub qcrb_ss: Option<Vec3>,
    pub flag: RowFlag,
}

/// Centroid QCRB along a sweep; rows keep grid order.
pub fn qcrb_grid(pupil: &PupilFunction, sweep: &Sweep) -> Vec<GridRow> {
    (0..sweep.values.len())
        .into_par_iter()
        .map(|k| {
            let l = sweep.point(k);
            let scene = SceneParams::with_l(l);
            let overlap = match compute_overlap(pupil, &scene) {
                Ok(o) => o,
                Err(e) => {
                    return GridRow {
                        l,
                        delta: None,
                        qcrb_ss: None,
                        flag: RowFlag::from_error(&e),
                    }
                }
            };
            let result = compute_matrix_elements(pupil, &scene, &overlap)
                .and_then(|el| compute_h_ss(&el, overlap.delta))
                .and_then(|h| invert_block(&h, "H(ss)"));
            match result {
                Ok(inv) => GridRow {
                    l,
                    delta: Some(overlap.delta),
                    qcrb_ss: Some([
                        inv.inverse[(0, 0)],
                        inv.inverse[(1, 1)],
                        inv.inverse[(2, 2)],
                    ]),
                    flag: RowFlag::Ok,
                },
                Err(e) => GridRow {
                    l,
                    delta: Some(overlap.delta),
                    qcrb_ss: None,
                    flag: RowFlag::from_error(&e),
                },
            }
        })
        .collect()
}
