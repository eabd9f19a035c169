//! Derivative-free simplex descent for small problems.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Edge length of the starting simplex along each axis.
    pub initial_step: f64,
    /// Stop once every vertex lies within this distance (max-norm) of the best.
    pub xtol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult<const D: usize> {
    pub x: [f64; D],
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

pub fn minimize<const D: usize, F>(
    mut f: F,
    x0: [f64; D],
    opts: &SimplexOptions,
) -> SimplexResult<D>
where
    F: FnMut(&[f64; D]) -> f64,
{
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64; D]| {
        evaluations += 1;
        f(x)
    };
    let mut simplex: Vec<([f64; D], f64)> = Vec::with_capacity(D + 1);
    simplex.push((x0, eval(&x0)));
    for i in 0..D {
        let mut x = x0;
        x[i] += opts.initial_step;
        let v = eval(&x);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].0;
        let spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread < opts.xtol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = [0.0; D];
        for (x, _) in &simplex[..D] {
            for k in 0..D {
                centroid[k] += x[k] / D as f64;
            }
        }
        let worst = simplex[D];
        let along = |t: f64| -> [f64; D] {
            std::array::from_fn(|k| centroid[k] + t * (worst.0[k] - centroid[k]))
        };

        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe);
            simplex[D] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[D - 1].1 {
            simplex[D] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let x = along(-0.5);
            (x, eval(&x))
        } else {
            let x = along(0.5);
            (x, eval(&x))
        };
        if fc < worst.1.min(fr) {
            simplex[D] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        for v in simplex.iter_mut().skip(1) {
            let x: [f64; D] = std::array::from_fn(|k| best[k] + 0.5 * (v.0[k] - best[k]));
            *v = (x, eval(&x));
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    SimplexResult {
        x: simplex[0].0,
        value: simplex[0].1,
        iterations,
        evaluations,
        converged,
    }
}
