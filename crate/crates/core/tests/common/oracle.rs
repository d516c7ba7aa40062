//! Direct O(N^2) reference implementations, written from the defining
//! formulas without any of the library's indexing or summation tricks.
#![allow(dead_code)]

use rvf_core::Vec2;

pub fn epanechnikov(u: f64) -> f64 {
    if u < 1.0 {
        2.0 / std::f64::consts::PI * (1.0 - u)
    } else {
        0.0
    }
}

/// Unbiased sample covariance `(sxx, sxy, syy)`.
pub fn sample_cov(p: &[Vec2]) -> (f64, f64, f64) {
    let n = p.len() as f64;
    let mx = p.iter().map(|q| q.x).sum::<f64>() / n;
    let my = p.iter().map(|q| q.y).sum::<f64>() / n;
    let mut s = (0.0, 0.0, 0.0);
    for q in p {
        s.0 += (q.x - mx) * (q.x - mx);
        s.1 += (q.x - mx) * (q.y - my);
        s.2 += (q.y - my) * (q.y - my);
    }
    (s.0 / (n - 1.0), s.1 / (n - 1.0), s.2 / (n - 1.0))
}

/// `d^T S^-1 d` through the explicit 2x2 inverse.
pub fn mahalanobis_sq(cov: (f64, f64, f64), d: Vec2) -> f64 {
    let det = cov.0 * cov.2 - cov.1 * cov.1;
    (cov.2 * d.x * d.x - 2.0 * cov.1 * d.x * d.y + cov.0 * d.y * d.y) / det
}

/// `det(S)^(-1/2) / N sum_j 1/(h l_j)^2 k(d_j^2 / (h l_j)^2)`.
pub fn kde(z: Vec2, pts: &[Vec2], h: f64, lambdas: &[f64]) -> f64 {
    kernel_terms(z, pts, h, lambdas).iter().sum()
}

pub fn kernel_terms(z: Vec2, pts: &[Vec2], h: f64, lambdas: &[f64]) -> Vec<f64> {
    let cov = sample_cov(pts);
    let det = cov.0 * cov.2 - cov.1 * cov.1;
    let n = pts.len() as f64;
    pts.iter()
        .zip(lambdas)
        .map(|(p, l)| {
            let bw2 = (h * l) * (h * l);
            epanechnikov(mahalanobis_sq(cov, z - *p) / bw2) / bw2 / det.sqrt() / n
        })
        .collect()
}

pub fn pilot(z: Vec2, pts: &[Vec2], h: f64) -> f64 {
    kde(z, pts, h, &vec![1.0; pts.len()])
}

/// Local factors with the geometric-mean normalizer.
pub fn lambdas(pts: &[Vec2], h: f64, alpha: f64) -> Vec<f64> {
    let f: Vec<f64> = pts.iter().map(|&p| pilot(p, pts, h)).collect();
    let g = (f.iter().map(|v| v.ln()).sum::<f64>() / f.len() as f64).exp();
    f.iter().map(|v| (v / g).powf(-alpha)).collect()
}

pub fn adaptive(z: Vec2, pts: &[Vec2], h: f64, alpha: f64) -> f64 {
    kde(z, pts, h, &lambdas(pts, h, alpha))
}

/// Kernel-weighted mean of `deltas` at `z`; `None` where no kernel reaches.
pub fn rvf_arrow(z: Vec2, starts: &[Vec2], deltas: &[Vec2], h: f64, alpha: f64) -> Option<Vec2> {
    let c = kernel_terms(z, starts, h, &lambdas(starts, h, alpha));
    let total: f64 = c.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut num = Vec2::ZERO;
    for (cj, d) in c.iter().zip(deltas) {
        num = num + *d * *cj;
    }
    Some(num * (1.0 / total))
}

/// Average of the other members of each unit's zone (`NaN` when alone).
pub fn neighbour_means(y: &[f64], zone: &[usize]) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let mates: Vec<f64> = (0..y.len()).filter(|&j| j != i && zone[j] == zone[i]).map(|j| y[j]).collect();
            if mates.is_empty() {
                f64::NAN
            } else {
                mates.iter().sum::<f64>() / mates.len() as f64
            }
        })
        .collect()
}

/// Moran's I as the explicit double sum over a dense weight matrix.
pub fn morans_i(y: &[f64], zone: &[usize]) -> f64 {
    let n = y.len();
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        let m = (0..n).filter(|&j| j != i && zone[j] == zone[i]).count();
        for j in 0..n {
            if j != i && zone[j] == zone[i] {
                w[i][j] = 1.0 / m as f64;
            }
        }
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let s0: f64 = w.iter().flatten().sum();
    let mut num = 0.0;
    for i in 0..n {
        for j in 0..n {
            num += w[i][j] * (y[i] - mean) * (y[j] - mean);
        }
    }
    let den: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    n as f64 / s0 * num / den
}

/// `(total, between, within)` population variances of `y` over zones.
pub fn variance_decomposition(y: &[f64], zone: &[usize]) -> (f64, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let total = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut between = 0.0;
    let mut within = 0.0;
    let zones: std::collections::BTreeSet<usize> = zone.iter().copied().collect();
    for z in zones {
        let m: Vec<f64> = y.iter().zip(zone).filter(|p| *p.1 == z).map(|p| *p.0).collect();
        let zm = m.iter().sum::<f64>() / m.len() as f64;
        between += m.len() as f64 * (zm - mean) * (zm - mean) / n;
        within += m.iter().map(|v| (v - zm) * (v - zm)).sum::<f64>() / n;
    }
    (total, between, within)
}
