//! Small dense linear algebra and harness helpers.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense LU factorization with partial pivoting, row-major storage.
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl Lu {
    pub fn factor(mut a: Vec<f64>, n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for r in (k + 1)..n {
                let v = a[r * n + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::Geometry(format!("singular matrix at pivot {k}")));
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                piv.swap(k, p);
            }
            let pivot = a[k * n + k];
            for r in (k + 1)..n {
                let m = a[r * n + k] / pivot;
                a[r * n + k] = m;
                for c in (k + 1)..n {
                    a[r * n + c] -= m * a[k * n + c];
                }
            }
        }
        Ok(Lu { n, lu: a, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for r in 1..n {
            for c in 0..r {
                x[r] = x[r] - self.lu[r * n + c] * x[c];
            }
        }
        for r in (0..n).rev() {
            for c in (r + 1)..n {
                x[r] = x[r] - self.lu[r * n + c] * x[c];
            }
            x[r] /= self.lu[r * n + r];
        }
        x
    }

    pub fn solve_complex(&self, b: &[Complex64]) -> Vec<Complex64> {
        let re: Vec<f64> = b.iter().map(|z| z.re).collect();
        let im: Vec<f64> = b.iter().map(|z| z.im).collect();
        let xr = self.solve(&re);
        let xi = self.solve(&im);
        xr.into_iter().zip(xi).map(|(r, i)| Complex64::new(r, i)).collect()
    }
}

/// Minimum-norm correction `d -> d - J^T (J J^T)^-1 (J d)` driving a linear
/// constraint map toward zero. `j` is row-major with `rows x cols` entries.
pub struct LeastSquaresProjector {
    rows: usize,
    cols: usize,
    j: Vec<f64>,
    normal: Lu,
}

impl LeastSquaresProjector {
    pub fn new(j: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        assert_eq!(j.len(), rows * cols);
        let mut jjt = vec![0.0; rows * rows];
        for r in 0..rows {
            for s in r..rows {
                let mut acc = 0.0;
                for c in 0..cols {
                    acc += j[r * cols + c] * j[s * cols + c];
                }
                jjt[r * rows + s] = acc;
                jjt[s * rows + r] = acc;
            }
        }
        // tiny ridge keeps redundant constraint rows harmless
        let scale = (0..rows).map(|r| jjt[r * rows + r]).fold(0.0f64, f64::max);
        let ridge = 1e-12 * scale.max(1e-300);
        for r in 0..rows {
            jjt[r * rows + r] += ridge;
        }
        let normal = Lu::factor(jjt, rows)?;
        Ok(LeastSquaresProjector { rows, cols, j, normal })
    }

    pub fn project(&self, data: &mut [Complex64], residual: &[Complex64]) {
        assert_eq!(data.len(), self.cols);
        assert_eq!(residual.len(), self.rows);
        let mu = self.normal.solve_complex(residual);
        for c in 0..self.cols {
            let mut corr = Complex64::new(0.0, 0.0);
            for r in 0..self.rows {
                corr += self.j[r * self.cols + c] * mu[r];
            }
            data[c] -= corr;
        }
    }
}

/// Observed convergence order between residuals on a grid and its doubling.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    if fine == 0.0 {
        return f64::INFINITY;
    }
    (coarse / fine).log2()
}

/// Smooth bump profile B(u) = exp(1 - 1/(1 - u^2)) for |u| < 1, exactly zero
/// outside. The exact zeros make compact-support statements testable.
pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

/// Monotone profile rising from exactly 0 at u <= 0 to exactly 1 at u >= 1,
/// built as the normalized integral of `bump`.
pub fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    // fixed-resolution Simpson quadrature of the bump integral; the profile
    // is only ever sampled, so a smooth deterministic approximation suffices
    const N: usize = 400;
    let quad = |upper: f64| -> f64 {
        let h = upper / N as f64;
        let mut acc = bump(2.0 * 0.0f64 - 1.0) + bump(2.0 * upper - 1.0);
        for k in 1..N {
            let v = k as f64 * h;
            acc += bump(2.0 * v - 1.0) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    quad(u) / quad(1.0)
}

/// Cubic Lagrange interpolation weights for target `s` in [0, 3] against
/// nodes {0, 1, 2, 3}.
pub fn lagrange4(s: f64) -> [f64; 4] {
    let mut w = [0.0; 4];
    for (k, wk) in w.iter_mut().enumerate() {
        let mut prod = 1.0;
        for m in 0..4 {
            if m != k {
                prod *= (s - m as f64) / (k as f64 - m as f64);
            }
        }
        *wk = prod;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves() {
        let a = vec![2.0, 1.0, -1.0, -3.0, -1.0, 2.0, -2.0, 1.0, 2.0];
        let lu = Lu::factor(a, 3).unwrap();
        let x = lu.solve(&[8.0, -11.0, -3.0]);
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
        assert!((x[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn bump_has_exact_zeros() {
        assert_eq!(bump(1.0), 0.0);
        assert_eq!(bump(-1.2), 0.0);
        assert!(bump(0.0) > 0.99);
    }

    #[test]
    fn smoothstep_plateaus_exact() {
        assert_eq!(smoothstep(-0.5), 0.0);
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep(2.0), 1.0);
        let mid = smoothstep(0.5);
        assert!((mid - 0.5).abs() < 1e-6);
    }

    #[test]
    fn projector_zeroes_constraints() {
        // constraint: x0 + x1 = 0 and x2 = 0 on a 4-vector
        let j = vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let p = LeastSquaresProjector::new(j, 2, 4).unwrap();
        let mut d: Vec<Complex64> =
            [1.0, 2.0, 3.0, 4.0].iter().map(|&v| Complex64::new(v, -v)).collect();
        let resid = vec![d[0] + d[1], d[2]];
        p.project(&mut d, &resid);
        assert!((d[0] + d[1]).norm() < 1e-9);
        assert!(d[2].norm() < 1e-9);
        assert!((d[3] - Complex64::new(4.0, -4.0)).norm() < 1e-12);
    }
}
