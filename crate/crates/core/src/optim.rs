//! Derivative-free simplex minimizer used by the distribution fitter.

pub(crate) struct SimplexOutcome {
    pub x: Vec<f64>,
    pub fx: f64,
}

/// Minimizes `f` with the Nelder-Mead simplex method.
///
/// The initial simplex places one vertex at `x0` and offsets vertex `i + 1`
/// by `steps[i]` along coordinate `i`. Iteration stops when the function
/// values across the simplex agree within `tol`, when the vertices collapse
/// to a point, or after `max_iters` iterations. Non-finite objective values
/// are ordered as worst, so the search retreats from them.
pub(crate) fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    max_iters: usize,
    tol: f64,
) -> SimplexOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let n = x0.len();
    assert_eq!(steps.len(), n, "one step per coordinate");

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let fx0 = f(x0);
    simplex.push((x0.to_vec(), fx0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let fx = f(&x);
        simplex.push((x, fx));
    }

    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_best = simplex[0].1;
        let f_worst = simplex[n].1;
        if (f_worst - f_best).abs() < tol {
            break;
        }
        let spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread < 1e-12 {
            break;
        }

        // Centroid of all vertices except the worst.
        let centroid: Vec<f64> = (0..n)
            .map(|i| simplex[..n].iter().map(|(x, _)| x[i]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].0.clone();
        let towards = |scale: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + scale * (c - w))
                .collect()
        };

        let xr = towards(REFLECT);
        let fr = f(&xr);
        if fr < f_best {
            let xe = towards(EXPAND);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = (xe, fe);
            } else {
                simplex[n] = (xr, fr);
            }
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        // Contract outside when the reflection improved on the worst
        // vertex, inside otherwise.
        let xc = if fr < simplex[n].1 {
            towards(CONTRACT)
        } else {
            towards(-CONTRACT)
        };
        let fc = f(&xc);
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        // Shrink every vertex toward the best.
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            for (xi, bi) in vertex.0.iter_mut().zip(&best) {
                *xi = bi + SHRINK * (*xi - bi);
            }
            vertex.1 = f(&vertex.0);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    SimplexOutcome { x, fx }
}
