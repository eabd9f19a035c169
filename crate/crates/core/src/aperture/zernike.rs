//! Noll-indexed Zernike polynomials, normalized so the disk average of
//! `Z_j^2` is one.

use super::AperturePoint;
use crate::error::{Error, Result};

/// Radial order `n` and azimuthal order `m >= 0` of Noll index `j >= 1`.
pub fn noll_to_nm(j: usize) -> (u32, u32) {
    assert!(j >= 1, "Noll indices start at 1");
    let mut n = 0usize;
    while (n + 1) * (n + 2) / 2 < j {
        n += 1;
    }
    let k = j - n * (n + 1) / 2 - 1;
    let m = if n.is_multiple_of(2) {
        2 * k.div_ceil(2)
    } else {
        2 * (k / 2) + 1
    };
    (n as u32, m as u32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZernikeMode {
    pub noll: usize,
    pub n: u32,
    pub m: u32,
    norm: f64,
    coefficients: [f64; 8],
}

impl ZernikeMode {
    pub fn new(noll: usize) -> Self {
        let (n, m) = noll_to_nm(noll);
        assert!(n <= 14, "radial orders above 14 are not supported");
        let mut coefficients = [0.0; 8];
        for k in 0..=((n - m) / 2) {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            coefficients[k as usize] = sign * factorial(n - k)
                / (factorial(k) * factorial((n + m) / 2 - k) * factorial((n - m) / 2 - k));
        }
        let norm = if m == 0 {
            f64::from(n + 1).sqrt()
        } else {
            (2.0 * f64::from(n + 1)).sqrt()
        };
        Self {
            noll,
            n,
            m,
            norm,
            coefficients,
        }
    }

    fn radial(&self, r: f64) -> f64 {
        (0..=((self.n - self.m) / 2))
            .map(|k| self.coefficients[k as usize] * r.powi((self.n - 2 * k) as i32))
            .sum()
    }

    pub fn eval(&self, p: AperturePoint) -> f64 {
        let r = p.r();
        let radial = self.norm * self.radial(r);
        if self.m == 0 {
            return radial;
        }
        let angle = f64::from(self.m) * p.theta();
        if self.noll.is_multiple_of(2) {
            radial * angle.cos()
        } else {
            radial * angle.sin()
        }
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// The first `n_modes` Noll Zernikes, `Z_1 .. Z_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZernikeBasis {
    modes: Vec<ZernikeMode>,
}

impl ZernikeBasis {
    pub fn new(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::ZernikeIndex {
                index: 0,
                n_modes: 0,
            });
        }
        Ok(Self {
            modes: (1..=n_modes).map(ZernikeMode::new).collect(),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[ZernikeMode] {
        &self.modes
    }

    pub fn mode(&self, index: usize) -> Result<&ZernikeMode> {
        if index == 0 || index > self.modes.len() {
            return Err(Error::ZernikeIndex {
                index,
                n_modes: self.modes.len(),
            });
        }
        Ok(&self.modes[index - 1])
    }

    /// `Z_index(point)` with Noll numbering.
    pub fn eval(&self, index: usize, point: AperturePoint) -> Result<f64> {
        Ok(self.mode(index)?.eval(point))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aperture::{PupilFunction, QuadratureSpec};
    use std::f64::consts::PI;

    #[test]
    fn noll_ordering() {
        let expected = [
            (0, 0),
            (1, 1),
            (1, 1),
            (2, 0),
            (2, 2),
            (2, 2),
            (3, 1),
            (3, 1),
            (3, 3),
            (3, 3),
            (4, 0),
            (4, 2),
            (4, 2),
            (4, 4),
            (4, 4),
        ];
        for (j, nm) in expected.iter().enumerate() {
            assert_eq!(noll_to_nm(j + 1), *nm, "j={}", j + 1);
        }
    }

    #[test]
    fn low_order_table() {
        let b = ZernikeBasis::new(6).unwrap();
        let p = AperturePoint::from_polar(0.7, 0.4);
        let (r, t) = (0.7f64, 0.4f64);
        assert_eq!(b.eval(1, p).unwrap(), 1.0);
        assert!((b.eval(2, p).unwrap() - 2.0 * r * t.cos()).abs() < 1e-14);
        assert!((b.eval(3, p).unwrap() - 2.0 * r * t.sin()).abs() < 1e-14);
        assert!((b.eval(4, p).unwrap() - 3f64.sqrt() * (2.0 * r * r - 1.0)).abs() < 1e-14);
        assert!((b.eval(5, p).unwrap() - 6f64.sqrt() * r * r * (2.0 * t).sin()).abs() < 1e-14);
        assert!((b.eval(6, p).unwrap() - 6f64.sqrt() * r * r * (2.0 * t).cos()).abs() < 1e-14);
    }

    #[test]
    fn spot_values() {
        let b = ZernikeBasis::new(4).unwrap();
        let origin = AperturePoint::new(0.0, 0.0);
        assert!((b.eval(4, origin).unwrap() + 3f64.sqrt()).abs() < 1e-15);
        assert!((b.eval(2, AperturePoint::new(1.0, 0.0)).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn index_out_of_range() {
        let b = ZernikeBasis::new(4).unwrap();
        let p = AperturePoint::new(0.1, 0.1);
        assert!(matches!(b.eval(0, p), Err(Error::ZernikeIndex { .. })));
        assert!(matches!(b.eval(5, p), Err(Error::ZernikeIndex { .. })));
    }

    #[test]
    fn orthonormal_on_disk() {
        let pupil = PupilFunction::clear_circular(QuadratureSpec::default()).unwrap();
        let b = ZernikeBasis::new(15).unwrap();
        for i in 1..=15 {
            for j in 1..=15 {
                let g = pupil
                    .disk_integral(|p| b.eval(i, p).unwrap() * b.eval(j, p).unwrap())
                    .re
                    / PI;
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-8, "<Z{i},Z{j}> = {g}");
            }
        }
    }
}
