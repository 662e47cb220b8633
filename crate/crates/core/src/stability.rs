//! Linearisation at steady states and local stability certificates.
//!
//! In the coordinates `(z1, z2, s1, s2)` with `z_i = s_in - x_i - s_i` the
//! Jacobian of every two-tank configuration is block lower-triangular: the
//! mass-balance block `A` (independent of the growth law) and the substrate
//! block `J*`. Its spectrum is therefore the union of both blocks' spectra.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{CouplingMaps, EquilibriumReport};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat2, Square};
use crate::model::{Chemostat, Configuration, GrowthLaw};

/// Real parts within this band of zero are classified as marginal.
pub const MARGINAL_BAND: f64 = 1e-12;
/// Relative disagreement between finite-difference Jacobians at steps `h`
/// and `2h` above which the estimate is flagged.
pub const RICHARDSON_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    ExponentiallyStable,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl From<num_complex::Complex64> for Eigenvalue {
    fn from(z: num_complex::Complex64) -> Self {
        Eigenvalue { re: z.re, im: z.im }
    }
}

/// Matrix of the mass-balance deviation dynamics `z' = A z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MassBalanceMatrix {
    Scalar(f64),
    Block(Mat2),
}

impl MassBalanceMatrix {
    pub fn trace(&self) -> f64 {
        match self {
            MassBalanceMatrix::Scalar(a) => *a,
            MassBalanceMatrix::Block(m) => m.trace(),
        }
    }

    pub fn det(&self) -> f64 {
        match self {
            MassBalanceMatrix::Scalar(a) => *a,
            MassBalanceMatrix::Block(m) => m.det(),
        }
    }

    pub fn eigenvalues(&self) -> Vec<Eigenvalue> {
        match self {
            MassBalanceMatrix::Scalar(a) => vec![Eigenvalue { re: *a, im: 0.0 }],
            MassBalanceMatrix::Block(m) => m.eigenvalues().into_iter().map(Eigenvalue::from).collect(),
        }
    }

    /// Least negative real part, the asymptotic decay rate of `|z|`.
    pub fn dominant(&self) -> f64 {
        self.eigenvalues().iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn mass_balance_matrix(config: &Configuration) -> MassBalanceMatrix {
    match *config {
        Configuration::SingleTank => MassBalanceMatrix::Scalar(-1.0),
        Configuration::Serial { r } => {
            let (a, b) = (1.0 / r, 1.0 / (1.0 - r));
            MassBalanceMatrix::Block(Mat2([[-a, 0.0], [b, -b]]))
        }
        Configuration::ParallelDiffusion(p) => {
            let (e1, e2) = (p.d / p.r, p.d / (1.0 - p.r));
            MassBalanceMatrix::Block(Mat2([
                [-p.alpha1() - e1, e1],
                [e2, -p.alpha2() - e2],
            ]))
        }
    }
}

/// Exact Jacobian of the vector field in `(s1, x1, s2, x2)` coordinates.
pub fn analytic_jacobian(system: &Chemostat, y: &[f64]) -> Square {
    let mu = &system.law;
    let tank = |s: f64, x: f64| (mu.derivative(s) * x, mu.eval(s));
    match system.config {
        Configuration::SingleTank => {
            let (gs, gx) = tank(y[0], y[1]);
            Square::from_rows(&[&[-gs - 1.0, -gx], &[gs, gx - 1.0]])
        }
        Configuration::Serial { r } => {
            let (a, b) = (1.0 / r, 1.0 / (1.0 - r));
            let (g1s, g1x) = tank(y[0], y[1]);
            let (g2s, g2x) = tank(y[2], y[3]);
            Square::from_rows(&[
                &[-g1s - a, -g1x, 0.0, 0.0],
                &[g1s, g1x - a, 0.0, 0.0],
                &[b, 0.0, -g2s - b, -g2x],
                &[0.0, b, g2s, g2x - b],
            ])
        }
        Configuration::ParallelDiffusion(p) => {
            let (a1, a2) = (p.alpha1(), p.alpha2());
            let (e1, e2) = (p.d / p.r, p.d / (1.0 - p.r));
            let (g1s, g1x) = tank(y[0], y[1]);
            let (g2s, g2x) = tank(y[2], y[3]);
            Square::from_rows(&[
                &[-g1s - a1 - e1, -g1x, e1, 0.0],
                &[g1s, g1x - a1 - e1, 0.0, e1],
                &[e2, 0.0, -g2s - a2 - e2, -g2x],
                &[0.0, e2, g2s, g2x - a2 - e2],
            ])
        }
    }
}

/// Central-difference Jacobian with step `h = 1e-7 max(1, |y|)`, and the
/// relative gap to the estimate at step `2h`.
pub fn finite_difference_jacobian(system: &Chemostat, y: &[f64]) -> (Square, f64) {
    let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let h = 1e-7 * scale;
    let fine = central_difference(system, y, h);
    let coarse = central_difference(system, y, 2.0 * h);
    let gap = fine
        .data
        .iter()
        .zip(&coarse.data)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / fine.max_abs().max(1.0);
    (fine, gap)
}

fn central_difference(system: &Chemostat, y: &[f64], h: f64) -> Square {
    let n = y.len();
    let mut jac = Square::zeros(n);
    let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
    let mut probe = y.to_vec();
    for j in 0..n {
        probe[j] = y[j] + h;
        system.rhs(&probe, &mut fp);
        probe[j] = y[j] - h;
        system.rhs(&probe, &mut fm);
        probe[j] = y[j];
        for i in 0..n {
            jac.set(i, j, (fp[i] - fm[i]) / (2.0 * h));
        }
    }
    jac
}

/// Rewrites a Jacobian given in `(s1, x1, s2, x2)` coordinates in the
/// coordinates `(z1, z2, s1, s2)` (or `(z, s)` for a single tank).
pub fn to_mass_coordinates(jac: &Square) -> Square {
    let tanks = jac.n / 2;
    // w = (z_1..z_k, s_1..s_k); y_{2i} = s_i, y_{2i+1} = s_in - s_i - z_i
    let n = jac.n;
    let mut p = Square::zeros(n); // dy = P dw
    let mut p_inv = Square::zeros(n); // dw = P^-1 dy
    for i in 0..tanks {
        let (z, s) = (i, tanks + i);
        let (ys, yx) = (2 * i, 2 * i + 1);
        p.set(ys, s, 1.0);
        p.set(yx, z, -1.0);
        p.set(yx, s, -1.0);
        p_inv.set(z, ys, -1.0);
        p_inv.set(z, yx, -1.0);
        p_inv.set(s, ys, 1.0);
    }
    p_inv.mul(jac).mul(&p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum JacobianMethod {
    Analytic,
    FiniteDifference { richardson_gap: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linearization {
    /// Jacobian in `(s1, x1, s2, x2)` coordinates.
    pub full: Square,
    /// Jacobian in `(z1, z2, s1, s2)` coordinates.
    pub block: Square,
    pub mass: MassBalanceMatrix,
    /// Substrate block; the closed form for the linear law.
    pub j_star: Option<Mat2>,
    pub method: JacobianMethod,
    /// Finite-difference estimate failed the Richardson consistency check.
    pub flagged: bool,
}

/// Closed-form substrate block at a steady state of the linear law.
pub fn j_star_closed_form(eq: &EquilibriumReport) -> Option<Mat2> {
    let s_in = eq.s_in;
    let (s1, s2) = (eq.s1(), eq.s2()?);
    match eq.config {
        Configuration::Serial { r } => {
            let b = 1.0 / (1.0 - r);
            Some(Mat2([[s1 - s_in, 0.0], [b, 2.0 * s2 - b - s_in]]))
        }
        Configuration::ParallelDiffusion(p) => {
            let (e1, e2) = (p.d / p.r, p.d / (1.0 - p.r));
            // -(d/r) phi2'(s1) = -(s_in - 2 s1 + alpha1) - d/r, defined at d = 0 too
            Some(Mat2([
                [-(s_in - 2.0 * s1 + p.alpha1()) - e1, e1],
                [e2, -(s_in - 2.0 * s2 + p.alpha2()) - e2],
            ]))
        }
        Configuration::SingleTank => None,
    }
}

/// The parallel `J*` written through the coupling maps' slopes.
pub fn j_star_from_maps(maps: &CouplingMaps, s1: f64, s2: f64) -> Mat2 {
    let (e1, e2) = (maps.d / maps.r, maps.d / (1.0 - maps.r));
    Mat2([
        [-e1 * maps.phi2_prime(s1), e1],
        [e2, -e2 * maps.phi1_prime(s2)],
    ])
}

pub fn jacobian_nontrivial(eq: &EquilibriumReport, law: &GrowthLaw) -> Result<Linearization> {
    if !eq.is_nontrivial() {
        return Err(Error::Unsupported {
            operation: "jacobian_nontrivial",
            requirement: "a non-trivial equilibrium",
        });
    }
    linearize(eq, law)
}

fn linearize(eq: &EquilibriumReport, law: &GrowthLaw) -> Result<Linearization> {
    let system = Chemostat::new(eq.config, *law, eq.s_in)?;
    let y = eq.state.to_vec();
    let (full, method, flagged) = if matches!(law, GrowthLaw::Linear { .. }) {
        (analytic_jacobian(&system, &y), JacobianMethod::Analytic, false)
    } else {
        let (jac, gap) = finite_difference_jacobian(&system, &y);
        (
            jac,
            JacobianMethod::FiniteDifference { richardson_gap: gap },
            gap > RICHARDSON_TOL,
        )
    };
    let block = to_mass_coordinates(&full);
    let j_star = if law.is_unit_linear() && eq.is_nontrivial() {
        j_star_closed_form(eq)
    } else if block.n == 4 {
        Some(Mat2([
            [block.get(2, 2), block.get(2, 3)],
            [block.get(3, 2), block.get(3, 3)],
        ]))
    } else {
        None
    };
    Ok(Linearization {
        full,
        block,
        mass: mass_balance_matrix(&eq.config),
        j_star,
        method,
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub mass_matrix_trace: f64,
    pub mass_matrix_det: f64,
    /// Trace and determinant of `J*` for two-tank non-trivial states, of
    /// the full Jacobian otherwise.
    pub jac_trace: f64,
    pub jac_det: f64,
    pub eigenvalues: Vec<Eigenvalue>,
    pub verdict: Verdict,
    /// Relative characteristic-polynomial residual when the dense solver
    /// was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polynomial_residual: Option<f64>,
    #[serde(default)]
    pub flagged: bool,
}

pub fn classify(eigenvalues: &[Eigenvalue]) -> Verdict {
    let top = eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    if top < -MARGINAL_BAND {
        Verdict::ExponentiallyStable
    } else if top > MARGINAL_BAND {
        Verdict::Unstable
    } else {
        Verdict::Marginal
    }
}

/// Local stability of a reported steady state from the spectrum of its
/// linearisation.
pub fn certify(eq: &EquilibriumReport, law: &GrowthLaw) -> Result<StabilityCertificate> {
    let lin = linearize(eq, law)?;
    let mass = lin.mass;
    let block_route = law.is_unit_linear() && eq.is_nontrivial();
    let (eigenvalues, jac_trace, jac_det, polynomial_residual) = match (block_route, lin.j_star) {
        (true, Some(js)) => {
            let mut ev = mass.eigenvalues();
            ev.extend(js.eigenvalues().into_iter().map(Eigenvalue::from));
            (ev, js.trace(), js.det(), None)
        }
        _ if lin.full.n == 2 => {
            let m = Mat2([
                [lin.full.get(0, 0), lin.full.get(0, 1)],
                [lin.full.get(1, 0), lin.full.get(1, 1)],
            ]);
            let ev = m.eigenvalues().into_iter().map(Eigenvalue::from).collect();
            (ev, m.trace(), m.det(), None)
        }
        _ => {
            let spec = linalg::eigenvalues(&lin.full);
            let ev = spec.eigenvalues.into_iter().map(Eigenvalue::from).collect();
            (ev, lin.full.trace(), lin.full.determinant(), Some(spec.residual))
        }
    };
    Ok(StabilityCertificate {
        mass_matrix_trace: mass.trace(),
        mass_matrix_det: mass.det(),
        jac_trace,
        jac_det,
        verdict: classify(&eigenvalues),
        eigenvalues,
        polynomial_residual,
        flagged: lin.flagged,
    })
}
