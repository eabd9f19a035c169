use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};

use crate::error::{Error, Result};
use crate::overlap::Vec3;

const SIMPLEX_TOL: f64 = 1e-10;

/// Photon counts of one frame: the Zernike channels plus the bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountFrame {
    pub counts: Vec<u64>,
    pub bucket: u64,
    pub total: u64,
}

impl CountFrame {
    pub fn new(counts: Vec<u64>, bucket: u64) -> Self {
        let total = counts.iter().sum::<u64>() + bucket;
        Self {
            counts,
            bucket,
            total,
        }
    }

    /// Counts followed by the bucket, aligned with full probability vectors.
    pub fn all_counts(&self) -> impl Iterator<Item = u64> + '_ {
        self.counts
            .iter()
            .copied()
            .chain(std::iter::once(self.bucket))
    }
}

/// Exact multinomial draw of `photons` over `probs` (bucket last), by
/// sequential conditional binomials.
pub fn sample_frame<R: Rng + ?Sized>(
    probs: &[f64],
    photons: u64,
    rng: &mut R,
) -> Result<CountFrame> {
    if probs.len() < 2 {
        return Err(Error::SimplexViolation(
            "need at least one channel and the bucket".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL || probs.iter().any(|p| !(*p >= -SIMPLEX_TOL)) {
        return Err(Error::SimplexViolation(format!(
            "probabilities sum to {total} or contain negatives"
        )));
    }
    let mut counts = Vec::with_capacity(probs.len());
    let mut remaining = photons;
    let mut mass = 1.0;
    for p in &probs[..probs.len() - 1] {
        let p = p.max(0.0);
        let m = if remaining == 0 || mass <= 0.0 {
            0
        } else {
            let q = (p / mass).clamp(0.0, 1.0);
            Binomial::new(remaining, q)
                .expect("conditional probability lies in [0, 1]")
                .sample(rng)
        };
        counts.push(m);
        remaining -= m;
        mass -= p;
    }
    Ok(CountFrame::new(counts, remaining))
}

/// Independent zero-mean Gaussian centroid offsets.
pub fn draw_centroid<R: Rng + ?Sized>(sigma: &Vec3, rng: &mut R) -> Vec3 {
    std::array::from_fn(|m| {
        if sigma[m] == 0.0 {
            0.0
        } else {
            Normal::new(0.0, sigma[m])
                .expect("non-negative standard deviation")
                .sample(rng)
        }
    })
}
