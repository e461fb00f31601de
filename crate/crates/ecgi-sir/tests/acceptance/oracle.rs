//! Exact forward recursion over the discretized (center, radius, mode) grid.

use ecgi_sir_core::filter::{log_likelihood, FilterConfig, Model, Particle};
use ecgi_sir_core::GeodesicTable;

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// `P(snap(max(r + σZ, 0)) = grid[j])`; values at a midpoint go to the lower bin.
pub fn radius_kernel(grid: &[f64], sigma: f64) -> Vec<Vec<f64>> {
    let mids: Vec<f64> = grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    grid.iter()
        .map(|&r| {
            (0..grid.len())
                .map(|j| {
                    let hi = if j < mids.len() { normal_cdf((mids[j] - r) / sigma) } else { 1.0 };
                    let lo = if j == 0 { 0.0 } else { normal_cdf((mids[j - 1] - r) / sigma) };
                    hi - lo
                })
                .collect()
        })
        .collect()
}

/// `P(c' = x | c)` when a bound `B ~ Exp(mean λ)` is drawn and `c'` is uniform
/// over the vertices within `B` of `c`.
pub fn center_kernel(table: &GeodesicTable, lambda: f64) -> Vec<Vec<f64>> {
    let m = table.vertex_count();
    let cdf = |u: f64| if u.is_infinite() { 1.0 } else { 1.0 - (-u / lambda).exp() };
    (0..m)
        .map(|c| {
            let row = table.row(c);
            let mut levels: Vec<f64> = row.to_vec();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            let mut out = vec![0.0; m];
            for (j, &u) in levels.iter().enumerate() {
                let next = levels.get(j + 1).copied().unwrap_or(f64::INFINITY);
                let mass = cdf(next) - cdf(u);
                let inside: Vec<usize> = (0..m).filter(|&x| row[x] <= u).collect();
                for &x in &inside {
                    out[x] += mass / inside.len() as f64;
                }
            }
            out
        })
        .collect()
}

/// Joint posterior after the last observation, indexed `[center][radius][mode]`.
pub fn grid_filter(observations: &[Vec<f64>], model: &Model<'_>, config: &FilterConfig) -> Vec<Vec<Vec<f64>>> {
    let grid = config.radius_grid.clone().expect("grid");
    let (m, nr, nm) = (model.vertex_count(), grid.len(), model.mode_count());
    let rk = radius_kernel(&grid, config.sigma_r);
    let ck: Vec<Vec<Vec<f64>>> = (0..nm).map(|k| center_kernel(model.table(k), config.lambda_mm)).collect();
    let keep = config.mode_keep_prob;
    let mk = |a: usize, b: usize| (1.0 - keep) / nm as f64 + if a == b { keep } else { 0.0 };

    let r0 = grid.iter().enumerate().min_by(|a, b| (a.1 - config.initial_radius()).abs().total_cmp(&(b.1 - config.initial_radius()).abs())).unwrap().0;
    let mut p = vec![vec![vec![0.0; nm]; nr]; m];
    for c in 0..m {
        for k in 0..nm {
            p[c][r0][k] = 1.0 / (m * nm) as f64;
        }
    }
    for y in observations {
        let mut q = vec![vec![vec![0.0; nm]; nr]; m];
        for c in 0..m {
            for r in 0..nr {
                for k in 0..nm {
                    let w = p[c][r][k];
                    if w == 0.0 {
                        continue;
                    }
                    for (c2, &pc) in ck[k][c].iter().enumerate() {
                        if pc == 0.0 {
                            continue;
                        }
                        for (r2, &pr) in rk[r].iter().enumerate() {
                            for k2 in 0..nm {
                                q[c2][r2][k2] += w * pc * pr * mk(k, k2);
                            }
                        }
                    }
                }
            }
        }
        let mut logs = vec![vec![vec![f64::NEG_INFINITY; nm]; nr]; m];
        let mut max = f64::NEG_INFINITY;
        for c in 0..m {
            for r in 0..nr {
                for k in 0..nm {
                    let part = Particle { centers: vec![c], radii: vec![grid[r]], mode: k };
                    let ll = log_likelihood(&part, y, model, config).unwrap();
                    logs[c][r][k] = ll;
                    max = max.max(ll);
                }
            }
        }
        let mut total = 0.0;
        for c in 0..m {
            for r in 0..nr {
                for k in 0..nm {
                    q[c][r][k] *= (logs[c][r][k] - max).exp();
                    total += q[c][r][k];
                }
            }
        }
        for v in q.iter_mut().flatten().flatten() {
            *v /= total;
        }
        p = q;
    }
    p
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
