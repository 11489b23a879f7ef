//! Throughput-maximizing velocity PMF for a fixed set of speeds.
//!
//! Maximizes `F(p) = sum_{i != j} p_i p_j (1/|v_i| + 1/|v_j|)` over the
//! probability simplex. With speeds sorted by magnitude the optimal support is
//! a prefix of the classes; the active-set loop solves the stationarity system
//! on the current prefix and drops the fastest class until the solution is
//! nonnegative.

use crate::error::{Error, Result};

const CLAMP_TOLERANCE: f64 = 1e-12;
const KKT_TOLERANCE: f64 = 1e-9;
const PIVOT_TOLERANCE: f64 = 1e-14;
const ORDER_SLACK: f64 = 1e-12;

fn inverse_speeds(speeds: &[f64]) -> Result<Vec<f64>> {
    speeds
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v == 0.0 || !v.is_finite() {
                Err(Error::invalid(format!("speed {i} must be finite and nonzero, got {v}")))
            } else {
                Ok(1.0 / v.abs())
            }
        })
        .collect()
}

/// `alpha_{ik} = 1/|v_i| + 1/|v_k|` off the diagonal, zero on it.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl AlphaMatrix {
    pub fn new(speeds: &[f64]) -> Result<Self> {
        let inv = inverse_speeds(speeds)?;
        let m = inv.len();
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                if i != k {
                    entries[i * m + k] = inv[i] + inv[k];
                }
            }
        }
        Ok(Self { m, entries })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.entries[i * self.m + k]
    }

    /// Leading principal submatrix of order `n`, row-major.
    pub fn leading(&self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|k| self.get(i, k)).collect()).collect()
    }

    /// `(A p)_i = sum_{k != i} p_k alpha_{ik}`.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| (0..self.m).map(|k| self.get(i, k) * p[k]).sum())
            .collect()
    }

    pub fn quadratic_form(&self, p: &[f64]) -> f64 {
        self.apply(p).iter().zip(p).map(|(a, b)| a * b).sum()
    }
}

/// The objective as a double sum over ordered pairs `i != j`.
pub fn objective_f(p: &[f64], speeds: &[f64]) -> Result<f64> {
    if p.len() != speeds.len() {
        return Err(Error::invalid(format!(
            "probability vector has {} entries but there are {} speeds",
            p.len(),
            speeds.len()
        )));
    }
    let inv = inverse_speeds(speeds)?;
    let mut f = 0.0;
    for i in 0..p.len() {
        for j in 0..p.len() {
            if i != j {
                f += p[i] * p[j] * (inv[i] + inv[j]);
            }
        }
    }
    Ok(f)
}

/// Hessian of `G(p_1..p_{M-1}) = F(p_1, .., p_{M-1}, 1 - sum)`:
/// `-4 diag(1/|v_1|, .., 1/|v_{M-1}|) - (4/|v_M|) J`.
pub fn hessian_of_g(speeds: &[f64]) -> Result<Vec<Vec<f64>>> {
    if speeds.len() < 2 {
        return Err(Error::invalid("Hessian of G needs at least two speeds"));
    }
    let inv = inverse_speeds(speeds)?;
    let n = inv.len() - 1;
    let last = inv[n];
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|k| -4.0 * last - if i == k { 4.0 * inv[i] } else { 0.0 })
                .collect()
        })
        .collect())
}

/// Gaussian elimination with partial pivoting. Fails when a pivot falls
/// below `1e-14` times the infinity norm of `a`.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let norm = a
        .iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty range");
        if a[pivot_row][col].abs() < PIVOT_TOLERANCE * norm {
            return Err(Error::Numerical(format!(
                "singular {n}x{n} system: pivot {:e} in column {col}",
                a[pivot_row][col]
            )));
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmfSolution {
    /// Optimal probabilities in the caller's class order.
    pub p: Vec<f64>,
    /// Optimal probabilities with classes sorted by ascending `|v|`.
    pub p_sorted: Vec<f64>,
    /// `order[j]` is the caller index of the `j`-th slowest class.
    pub order: Vec<usize>,
    pub objective: f64,
    pub active_set_size: usize,
    /// Common value of `(A p)_i` over the active classes.
    pub kkt_nu: f64,
    /// Largest stationarity violation: `|nu - (A p)_i|` on active classes,
    /// `(A p)_i - nu` on inactive ones.
    pub kkt_residual: f64,
}

/// Stationarity multiplier and residual of `p` for the alpha matrix.
pub fn kkt_certificate(alpha: &AlphaMatrix, p: &[f64]) -> (f64, f64) {
    let ap = alpha.apply(p);
    let active: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    let nu = active.iter().map(|&i| ap[i]).sum::<f64>() / active.len().max(1) as f64;
    let residual = (0..p.len())
        .map(|i| {
            if p[i] > 0.0 {
                (nu - ap[i]).abs()
            } else {
                (ap[i] - nu).max(0.0)
            }
        })
        .fold(0.0, f64::max);
    (nu, residual)
}

pub fn optimize_pmf(speeds: &[f64]) -> Result<PmfSolution> {
    let m = speeds.len();
    if m < 2 {
        return Err(Error::invalid(format!("need at least two speeds, got {m}")));
    }
    inverse_speeds(speeds)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| speeds[i].abs().total_cmp(&speeds[j].abs()));
    let sorted: Vec<f64> = order.iter().map(|&i| speeds[i]).collect();
    let alpha = AlphaMatrix::new(&sorted)?;

    let mut n = m;
    let p_sorted = loop {
        if n < 2 {
            return Err(Error::Numerical("active set collapsed below two classes".into()));
        }
        let x = solve_dense(alpha.leading(n), vec![1.0; n])?;
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        let mut p: Vec<f64> = x.iter().map(|v| v / l1).collect();
        if p.iter().all(|&v| v >= -CLAMP_TOLERANCE) {
            for v in p.iter_mut() {
                *v = v.max(0.0);
            }
            let total: f64 = p.iter().sum();
            for v in p.iter_mut() {
                *v /= total;
            }
            p.resize(m, 0.0);
            break p;
        }
        n -= 1;
    };

    let (kkt_nu, kkt_residual) = kkt_certificate(&alpha, &p_sorted);
    if kkt_residual > KKT_TOLERANCE {
        return Err(Error::Numerical(format!(
            "KKT residual {kkt_residual:e} exceeds {KKT_TOLERANCE:e}"
        )));
    }
    let mut p = vec![0.0; m];
    for (j, &i) in order.iter().enumerate() {
        p[i] = p_sorted[j];
    }
    Ok(PmfSolution {
        objective: alpha.quadratic_form(&p_sorted),
        active_set_size: p_sorted.iter().filter(|&&v| v > 0.0).count(),
        p,
        p_sorted,
        order,
        kkt_nu,
        kkt_residual,
    })
}

/// Whether `p` is nonincreasing when classes are ordered by ascending `|v|`.
pub fn is_monotone_in_speed(p: &[f64], speeds: &[f64]) -> bool {
    if p.len() != speeds.len() {
        return false;
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&i, &j| speeds[i].abs().total_cmp(&speeds[j].abs()));
    order.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        // tied speeds carry no ordering
        speeds[a].abs() == speeds[b].abs() || p[a] + ORDER_SLACK >= p[b]
    })
}
