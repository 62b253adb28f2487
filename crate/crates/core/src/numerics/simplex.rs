//! Nelder-Mead downhill simplex.

use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_iters: usize,
    /// Stop once every vertex lies within this max-norm distance of the best.
    pub tolerance: f64,
    /// Edge length of the initial simplex along each coordinate axis.
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tolerance: 1e-8,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `objective` from `x0`. Non-finite values away from `x0` count as
/// `+inf`, so the search steps back from them. The returned point is never
/// worse than `x0`.
pub fn nelder_mead<F>(
    mut objective: F,
    x0: &[f64],
    options: &SimplexOptions,
) -> Result<SimplexResult, NumericsError>
where
    F: FnMut(&[f64]) -> f64,
{
    if options.max_iters == 0 {
        return Err(NumericsError::InvalidOptions("max_iters must be at least 1"));
    }
    let f0 = objective(x0);
    if !f0.is_finite() {
        return Err(NumericsError::NonFiniteObjective);
    }
    let n = x0.len();
    if n == 0 {
        return Ok(SimplexResult {
            x: Vec::new(),
            f: f0,
            iterations: 0,
            converged: true,
        });
    }
    let mut eval = |x: &[f64]| {
        let v = objective(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += options.initial_step;
        let f = eval(&v);
        simplex.push((v, f));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iters {
        // stable sort keeps x0 ahead of equal-valued vertices
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if diameter(&simplex) < options.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let reflected = along(REFLECT);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(EXPAND);
            let fe = eval(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < worst.1 {
            let c = along(CONTRACT * REFLECT);
            let f = eval(&c);
            (c, f)
        } else {
            let c = along(-CONTRACT);
            let f = eval(&c);
            (c, f)
        };
        if fc < worst.1.min(fr) {
            simplex[n] = (contracted, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let shrunk: Vec<f64> = best
                .iter()
                .zip(&vertex.0)
                .map(|(b, v)| b + SHRINK * (v - b))
                .collect();
            let f = eval(&shrunk);
            *vertex = (shrunk, f);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Ok(SimplexResult {
        x,
        f,
        iterations,
        converged,
    })
}

fn diameter(simplex: &[(Vec<f64>, f64)]) -> f64 {
    let best = &simplex[0].0;
    simplex[1..]
        .iter()
        .flat_map(|(v, _)| v.iter().zip(best).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}
