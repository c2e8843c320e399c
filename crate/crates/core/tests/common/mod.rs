//! Reference computations written independently of the library code paths.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sparse_hw::rng::RngStream;

pub fn rng(seed: u64) -> RngStream {
    RngStream::new(seed, 0x7e57)
}

pub fn gauss(rng: &mut RngStream) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_matrix(rng: &mut RngStream, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| gauss(rng))
}

pub fn random_symmetric(rng: &mut RngStream, n: usize, diagonal_free: bool) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = if i == j && diagonal_free { 0.0 } else { gauss(rng) };
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

pub fn random_p(rng: &mut RngStream, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..=hi)).collect()
}

/// Singular values by one-sided (Hestenes) Jacobi rotations, descending.
pub fn jacobi_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let w = if a.nrows() >= a.ncols() { a.clone() } else { a.transpose() };
    let (m, n) = w.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| w.column(j).iter().copied().collect()).collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha: f64 = cols[i].iter().map(|v| v * v).sum();
                let beta: f64 = cols[j].iter().map(|v| v * v).sum();
                let gamma: f64 = cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let (x, y) = (cols[i][k], cols[j][k]);
                    cols[i][k] = c * x - s * y;
                    cols[j][k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn lp(x: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        x.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    } else {
        x.iter().map(|v| v.abs().powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// `n` near-uniform points on the unit sphere in ℝ³.
pub fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            [r * th.cos(), r * th.sin(), z]
        })
        .collect()
}

/// `max ‖Ax‖_{r2}/‖x‖_{r1}` over a Fibonacci grid of directions (3 columns).
pub fn grid_opnorm3(a: &DMatrix<f64>, r1: f64, r2: f64, points: usize) -> f64 {
    assert_eq!(a.ncols(), 3);
    let mut best: f64 = 0.0;
    let mut y = vec![0.0; a.nrows()];
    for x in fibonacci_sphere(points) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = a[(i, 0)] * x[0] + a[(i, 1)] * x[1] + a[(i, 2)] * x[2];
        }
        best = best.max(lp(&y, r2) / lp(&x, r1));
    }
    best
}

/// Every 0/1 mask of length n with its probability under independent Bernoulli(p).
pub fn masks(p: &[f64]) -> Vec<(Vec<bool>, f64)> {
    let n = p.len();
    (0..1usize << n)
        .map(|bits| {
            let m: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            let prob = m.iter().zip(p).map(|(&b, &q)| if b { q } else { 1.0 - q }).product();
            (m, prob)
        })
        .collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
