//! Independent oracles for the integration tests. Nothing here calls the
//! library's calculus or minimizer; every formula is written out for a 1D
//! uniform grid on (0, 1) with zero boundary values.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Interior values u_1..u_N with spacing h = 1/(N+1).
pub struct Line1d {
    pub n: usize,
    pub h: f64,
}

impl Line1d {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            h: 1.0 / (n + 1) as f64,
        }
    }

    /// Edge differences (u_{e+1} - u_e)/h for e = 0..=N with zero padding.
    pub fn diffs(&self, u: &[f64]) -> Vec<f64> {
        (0..=self.n)
            .map(|e| {
                let right = if e < self.n { u[e] } else { 0.0 };
                let left = if e > 0 { u[e - 1] } else { 0.0 };
                (right - left) / self.h
            })
            .collect()
    }

    /// h * sum_e |D_e|^p.
    pub fn dirichlet(&self, u: &[f64], p: f64) -> f64 {
        self.h * self.diffs(u).iter().map(|d| d.abs().powf(p)).sum::<f64>()
    }
}

fn h_n(t: f64, n: f64, delta: f64) -> f64 {
    if t >= 0.0 {
        (t + 1.0 / n).powf(1.0 - delta) / (1.0 - delta)
    } else {
        (1.0 / n).powf(1.0 - delta) / (1.0 - delta) + n.powf(delta) * t
    }
}

fn h_n_prime(t: f64, n: f64, delta: f64) -> f64 {
    if t >= 0.0 {
        (t + 1.0 / n).powf(-delta)
    } else {
        n.powf(delta)
    }
}

fn h_n_second(t: f64, n: f64, delta: f64) -> f64 {
    if t >= 0.0 {
        -delta * (t + 1.0 / n).powf(-delta - 1.0)
    } else {
        0.0
    }
}

/// J_n on the line with source values `f` (already truncated by the caller).
pub fn jn_energy(line: &Line1d, u: &[f64], f: &[f64], p: f64, delta: f64, n: f64) -> f64 {
    let src: f64 = u.iter().zip(f).map(|(&v, &fk)| h_n(v, n, delta) * fk).sum();
    line.dirichlet(u, p) / p - line.h * src
}

/// Solves the dense linear system `a x = b` by Gaussian elimination with
/// partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let m = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Damped Newton on J_n with a dense Hessian, from several seeded starts.
/// Returns the lowest-energy stationary point found.
pub fn dense_jn_minimizer(line: &Line1d, f: &[f64], p: f64, delta: f64, n: f64, starts: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in 0..starts {
        let mut u: Vec<f64> = if s == 0 {
            vec![0.1; line.n]
        } else {
            (0..line.n).map(|_| rng.gen_range(0.01..1.0)).collect()
        };
        for _ in 0..200 {
            let d = line.diffs(&u);
            let k: Vec<f64> = d.iter().map(|x| (p - 1.0) * x.abs().powf(p - 2.0) / line.h).collect();
            let flux: Vec<f64> = d.iter().map(|x| x.abs().powf(p - 2.0) * x).collect();
            let grad: Vec<f64> = (0..line.n)
                .map(|i| flux[i] - flux[i + 1] - line.h * f[i] * h_n_prime(u[i], n, delta))
                .collect();
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm < 1e-15 {
                break;
            }
            let mut hess = vec![vec![0.0; line.n]; line.n];
            for i in 0..line.n {
                hess[i][i] = k[i] + k[i + 1] - line.h * f[i] * h_n_second(u[i], n, delta);
                if i + 1 < line.n {
                    hess[i][i + 1] = -k[i + 1];
                    hess[i + 1][i] = -k[i + 1];
                }
            }
            let step = solve_dense(hess, grad.iter().map(|g| -g).collect());
            let e0 = jn_energy(line, &u, f, p, delta, n);
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a + t * b).collect();
                if jn_energy(line, &trial, f, p, delta, n) <= e0 || t < 1e-12 {
                    u = trial;
                    break;
                }
                t *= 0.5;
            }
        }
        let e = jn_energy(line, &u, f, p, delta, n);
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            best = Some((e, u));
        }
    }
    best.unwrap().1
}

/// R(v) = h sum |D|^p / (h sum |v|^{1-delta} f)^{p/(1-delta)}.
pub fn quotient(line: &Line1d, v: &[f64], f: &[f64], p: f64, delta: f64) -> f64 {
    let e = 1.0 - delta;
    let c: f64 = line.h * v.iter().zip(f).map(|(x, fk)| x.abs().powf(e) * fk).sum::<f64>();
    line.dirichlet(v, p) / c.powf(p / e)
}

/// Nelder-Mead with restarts around the incumbent.
pub fn nelder_mead(
    obj: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    scale: f64,
    restarts: usize,
    iters: usize,
) -> (f64, Vec<f64>) {
    let d = x0.len();
    let mut best = x0.to_vec();
    let mut best_val = obj(&best);
    let mut size = scale;
    for _ in 0..restarts {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..d {
            let mut x = best.clone();
            x[i] += size;
            simplex.push(x);
        }
        let mut vals: Vec<f64> = simplex.iter().map(|x| obj(x)).collect();
        for _ in 0..iters {
            let mut order: Vec<usize> = (0..=d).collect();
            order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            vals = order.iter().map(|&i| vals[i]).collect();
            let centroid: Vec<f64> = (0..d)
                .map(|j| simplex[..d].iter().map(|x| x[j]).sum::<f64>() / d as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                (0..d)
                    .map(|j| centroid[j] + t * (simplex[d][j] - centroid[j]))
                    .collect()
            };
            let xr = along(-1.0);
            let fr = obj(&xr);
            if fr < vals[0] {
                let xe = along(-2.0);
                let fe = obj(&xe);
                if fe < fr {
                    simplex[d] = xe;
                    vals[d] = fe;
                } else {
                    simplex[d] = xr;
                    vals[d] = fr;
                }
            } else if fr < vals[d - 1] {
                simplex[d] = xr;
                vals[d] = fr;
            } else {
                let xc = if fr < vals[d] { along(-0.5) } else { along(0.5) };
                let fc = obj(&xc);
                if fc < vals[d].min(fr) {
                    simplex[d] = xc;
                    vals[d] = fc;
                } else {
                    for i in 1..=d {
                        simplex[i] = (0..d)
                            .map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]))
                            .collect();
                        vals[i] = obj(&simplex[i]);
                    }
                }
            }
        }
        let i = (0..=d).min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap()).unwrap();
        if vals[i] < best_val {
            best_val = vals[i];
            best = simplex[i].clone();
        }
        size *= 0.3;
    }
    (best_val, best)
}

/// Composite Simpson rule on [a, b] with `m` (even) panels.
pub fn simpson(g: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = g(a) + g(b);
    for i in 1..m {
        s += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Continuum solution of -u'' = u^{-delta} on (0, 1), u(0) = u(1) = 0, from
/// the first integral u'^2/2 + u^{1-delta}/(1-delta) = m^{1-delta}/(1-delta).
pub struct OdeProfile {
    pub delta: f64,
    /// max u = u(1/2)
    pub m: f64,
    c: f64,
}

impl OdeProfile {
    /// `int_0^s (1 - r^e)^{-1/2} dr` with the endpoint singularity removed by r = 1 - w^2.
    fn kernel(e: f64, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let w_lo = (1.0 - s).max(0.0).sqrt();
        let g = |w: f64| {
            let one_minus = -(e * (-w * w).ln_1p()).exp_m1();
            if w == 0.0 {
                2.0 / e.sqrt()
            } else {
                2.0 * w / one_minus.sqrt()
            }
        };
        simpson(g, w_lo, 1.0, 4000)
    }

    pub fn new(delta: f64) -> Self {
        let e = 1.0 - delta;
        let c = 2.0 / e;
        let full = Self::kernel(e, 1.0);
        // distance from the wall to the top: m^{1 - e/2} full / sqrt(c) = 1/2
        let m = (0.5 * c.sqrt() / full).powf(1.0 / (1.0 - e / 2.0));
        Self { delta, m, c }
    }

    /// Distance from the nearest wall at which u reaches `u`.
    fn distance(&self, u: f64) -> f64 {
        let e = 1.0 - self.delta;
        self.m.powf(1.0 - e / 2.0) / self.c.sqrt() * Self::kernel(e, u / self.m)
    }

    pub fn value(&self, x: f64) -> f64 {
        let x = x.min(1.0 - x);
        if x <= 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, self.m);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.distance(mid) < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}
