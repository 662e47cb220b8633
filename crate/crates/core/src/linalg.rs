//! Small dense matrices and their eigenvalues.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    /// Roots of `l^2 - tr l + det`.
    pub fn eigenvalues(&self) -> [Complex64; 2] {
        quadratic_eigenvalues(self.trace(), self.det())
    }
}

pub fn quadratic_eigenvalues(tr: f64, det: f64) -> [Complex64; 2] {
    let half = 0.5 * tr;
    let disc = half * half - det;
    if disc >= 0.0 {
        let root = disc.sqrt();
        // avoid cancellation in the smaller-magnitude root
        let big = if half >= 0.0 { half + root } else { half - root };
        let small = if big != 0.0 { det / big } else { 0.0 };
        let (hi, lo) = if big >= small { (big, small) } else { (small, big) };
        [Complex64::new(hi, 0.0), Complex64::new(lo, 0.0)]
    } else {
        let im = (-disc).sqrt();
        [Complex64::new(half, im), Complex64::new(half, -im)]
    }
}

/// Row-major square matrix of modest size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Square {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Square {
    pub fn zeros(n: usize) -> Self {
        Square {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "non-square input");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn mul(&self, other: &Square) -> Square {
        let n = self.n;
        let mut out = Square::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Characteristic polynomial coefficients `c[0..=n]` (ascending, monic)
    /// by the Faddeev-LeVerrier recursion.
    pub fn characteristic_polynomial(&self) -> Vec<f64> {
        let n = self.n;
        let mut c = vec![0.0; n + 1];
        c[n] = 1.0;
        let mut m = Square::zeros(n);
        for k in 1..=n {
            // M_k = A M_{k-1} + c_{n-k+1} I
            let mut next = self.mul(&m);
            for i in 0..n {
                let v = next.get(i, i) + c[n - k + 1];
                next.set(i, i, v);
            }
            m = next;
            c[n - k] = -self.mul(&m).trace() / k as f64;
        }
        c
    }

    pub fn determinant(&self) -> f64 {
        let c = self.characteristic_polynomial();
        if self.n.is_multiple_of(2) {
            c[0]
        } else {
            -c[0]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    /// Largest `|p(l)| / sum |c_k| |l|^k` over the computed eigenvalues.
    pub residual: f64,
}

/// Eigenvalues through the characteristic polynomial, solved with
/// Aberth-Ehrlich simultaneous iteration and a Newton polish.
pub fn eigenvalues(m: &Square) -> Spectrum {
    match m.n {
        0 => Spectrum {
            eigenvalues: Vec::new(),
            residual: 0.0,
        },
        1 => Spectrum {
            eigenvalues: vec![Complex64::new(m.get(0, 0), 0.0)],
            residual: 0.0,
        },
        _ => {
            let c = m.characteristic_polynomial();
            let roots = polynomial_roots(&c);
            let residual = roots
                .iter()
                .map(|&z| relative_residual(&c, z))
                .fold(0.0, f64::max);
            Spectrum {
                eigenvalues: roots,
                residual,
            }
        }
    }
}

fn horner(c: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &ck in c.iter().rev() {
        dp = dp * z + p;
        p = p * z + ck;
    }
    (p, dp)
}

fn relative_residual(c: &[f64], z: Complex64) -> f64 {
    let (p, _) = horner(c, z);
    let r = z.norm();
    let scale: f64 = c.iter().enumerate().map(|(k, ck)| ck.abs() * r.powi(k as i32)).sum();
    if scale == 0.0 {
        0.0
    } else {
        p.norm() / scale
    }
}

/// All complex roots of the monic polynomial with ascending coefficients `c`.
pub fn polynomial_roots(c: &[f64]) -> Vec<Complex64> {
    let n = c.len() - 1;
    // Cauchy bound on root magnitudes
    let bound = 1.0 + c[..n].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / n as f64;
            Complex64::from_polar(0.5 * bound, angle)
        })
        .collect();
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..n {
            let (p, dp) = horner(c, z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let diff = z[i] - z[j];
                    if diff.norm() == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        diff.inv()
                    }
                })
                .sum();
            let step = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
            if step.is_finite() {
                z[i] -= step;
                moved = moved.max(step.norm() / z[i].norm().max(1.0));
            }
        }
        if moved < 1e-15 {
            break;
        }
    }
    for zi in z.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = horner(c, *zi);
            if dp.norm() == 0.0 {
                break;
            }
            let cand = *zi - p / dp;
            let (pc, _) = horner(c, cand);
            if pc.norm() < p.norm() {
                *zi = cand;
            } else {
                break;
            }
        }
        if zi.im.abs() <= 1e-12 * zi.norm().max(1.0) {
            zi.im = 0.0;
        }
    }
    z.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap().then(b.im.partial_cmp(&a.im).unwrap()));
    z
}
