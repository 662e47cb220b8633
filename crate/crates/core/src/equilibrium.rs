//! Steady states of the three configurations.
//!
//! Closed forms are used where they exist (single tank, parallel tanks
//! without diffusion). Otherwise the steady state is reduced to a scalar
//! equation and bracketed: tank 2 of the serial cascade, and the zero of
//! `g(s1) = phi1(phi2(s1)) - s1` for parallel tanks with diffusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Chemostat, Configuration, GrowthLaw, NetworkState, Parallel};
use crate::roots;

/// Absolute residual gate on the vector field at a reported equilibrium.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// Absolute gate on `|g(s1*)|`.
pub const ROOT_TOL: f64 = 1e-12;

const COARSE_SCAN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquilibriumKind {
    /// Biomass present in every tank.
    NonTrivial,
    /// No biomass anywhere; substrate leaves at the input level.
    Washout,
    /// First tank washed out, second one alive.
    Tank1Washout,
    /// Second tank washed out, first one alive (parallel tanks without
    /// diffusion).
    Tank2Washout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum Flag {
    /// The growth law never reaches the dilution rate of a tank.
    UnreachableDilution { dilution: f64 },
    /// Serial cascade with the first tank washed out; the second tank was
    /// solved as a standalone chemostat fed at `s_in`.
    CascadedWashout,
    /// More than one positive steady state was found.
    MultipleEquilibria { count: usize },
}

/// `g` and its slope at the reported root, in the labelling `alpha2 >= alpha1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootCertificate {
    pub g: f64,
    pub g_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub config: Configuration,
    pub s_in: f64,
    pub kind: EquilibriumKind,
    pub state: NetworkState,
    pub s_out: f64,
    /// Max-norm of the vector field at `state`.
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<RootCertificate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<Flag>,
    /// Further positive steady states, when the root scan found several.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<NetworkState>,
}

impl EquilibriumReport {
    fn assemble(system: &Chemostat, kind: EquilibriumKind, state: NetworkState) -> Self {
        EquilibriumReport {
            config: system.config,
            s_in: system.s_in,
            kind,
            state,
            s_out: system.s_out(&state),
            residual: system.residual(&state.to_vec()),
            certificate: None,
            flags: Vec::new(),
            alternatives: Vec::new(),
        }
    }

    pub fn is_nontrivial(&self) -> bool {
        self.kind == EquilibriumKind::NonTrivial
    }

    pub fn s1(&self) -> f64 {
        self.state.substrates()[0]
    }

    pub fn x1(&self) -> f64 {
        self.state.biomasses()[0]
    }

    pub fn s2(&self) -> Option<f64> {
        self.state.substrates().get(1).copied()
    }

    pub fn x2(&self) -> Option<f64> {
        self.state.biomasses().get(1).copied()
    }
}

/// The maps whose fixed points are the parallel steady states:
/// `phi2` gives the tank-2 substrate balancing tank 1, `phi1` the converse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingMaps {
    pub s_in: f64,
    pub r: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub d: f64,
    pub law: GrowthLaw,
}

impl CouplingMaps {
    pub fn new(s_in: f64, plant: &Parallel, law: GrowthLaw) -> Result<Self> {
        plant.validate()?;
        if plant.d == 0.0 {
            return Err(Error::ZeroDiffusion);
        }
        Ok(CouplingMaps {
            s_in,
            r: plant.r,
            alpha1: plant.alpha1(),
            alpha2: plant.alpha2(),
            d: plant.d,
            law,
        })
    }

    // phi(s) - s, kept separate so that g avoids subtracting nearly equal
    // numbers when d is large.
    fn step2(&self, s1: f64) -> f64 {
        self.r / self.d * (self.s_in - s1) * (self.law.eval(s1) - self.alpha1)
    }

    fn step1(&self, s2: f64) -> f64 {
        (1.0 - self.r) / self.d * (self.s_in - s2) * (self.law.eval(s2) - self.alpha2)
    }

    pub fn phi2(&self, s1: f64) -> f64 {
        s1 + self.step2(s1)
    }

    pub fn phi1(&self, s2: f64) -> f64 {
        s2 + self.step1(s2)
    }

    /// `phi1(phi2(s1)) - s1`.
    pub fn g(&self, s1: f64) -> f64 {
        let s2 = self.phi2(s1);
        self.step2(s1) + self.step1(s2)
    }

    pub fn phi2_prime(&self, s1: f64) -> f64 {
        let mu = &self.law;
        1.0 + self.r / self.d * ((self.s_in - s1) * mu.derivative(s1) - (mu.eval(s1) - self.alpha1))
    }

    pub fn phi1_prime(&self, s2: f64) -> f64 {
        let mu = &self.law;
        1.0 + (1.0 - self.r) / self.d * ((self.s_in - s2) * mu.derivative(s2) - (mu.eval(s2) - self.alpha2))
    }

    pub fn g_prime(&self, s1: f64) -> f64 {
        self.phi1_prime(self.phi2(s1)) * self.phi2_prime(s1) - 1.0
    }

    /// Right end of the interval starting at `floor` on which `phi2` rises.
    /// `phi2` is concave for concave growth laws, so this is its maximiser
    /// capped at `s_in`.
    pub fn rising_end(&self, floor: f64) -> f64 {
        if self.phi2_prime(self.s_in) >= 0.0 {
            return self.s_in;
        }
        match self.law {
            GrowthLaw::Linear { m } => ((m * self.s_in + self.alpha1 + self.d / self.r) / (2.0 * m)).min(self.s_in),
            _ => roots::bisect(|s| self.phi2_prime(s), floor, self.s_in, 0.0),
        }
    }

    /// Preimage of `s2` under `phi2` on the rising branch `[floor, peak]`.
    pub fn phi2_inverse(&self, s2: f64, floor: f64, peak: f64) -> f64 {
        match self.law {
            GrowthLaw::Linear { m } => {
                // s^2 - b s + c = 0, smaller root
                let b = self.s_in + self.alpha1 / m + self.d / (self.r * m);
                let c = self.s_in * self.alpha1 / m + self.d * s2 / (self.r * m);
                let disc = (b * b - 4.0 * c).max(0.0);
                (2.0 * c / (b + disc.sqrt())).clamp(floor, peak)
            }
            _ => {
                let f = |s: f64| self.phi2(s) - s2;
                if f(floor) >= 0.0 {
                    floor
                } else if f(peak) <= 0.0 {
                    peak
                } else {
                    roots::bisect(f, floor, peak, 0.0)
                }
            }
        }
    }

    // Substrate balances of the two tanks with x_i = s_in - s_i, scaled
    // like the vector field.
    fn balances(&self, s1: f64, s2: f64) -> [f64; 2] {
        let mu = &self.law;
        let f1 = self.r * (self.s_in - s1) * (mu.eval(s1) - self.alpha1) - self.d * (s2 - s1);
        let f2 = (1.0 - self.r) * (self.s_in - s2) * (mu.eval(s2) - self.alpha2) - self.d * (s1 - s2);
        [f1, f2]
    }

    fn balance_norm(&self, s1: f64, s2: f64) -> f64 {
        let [f1, f2] = self.balances(s1, s2);
        (f1.abs() / self.r).max(f2.abs() / (1.0 - self.r))
    }

    // For small d the maps amplify rounding by 1/d; a few Newton steps on
    // the balances themselves bring the field residual back to rounding
    // level.
    fn refine(&self, s1: f64, s2: f64) -> (f64, f64) {
        let (mut s1, mut s2) = (s1, s2);
        let mut best = self.balance_norm(s1, s2);
        if best <= 0.1 * RESIDUAL_TOL {
            return (s1, s2);
        }
        let mu = &self.law;
        for _ in 0..4 {
            let [f1, f2] = self.balances(s1, s2);
            let a = self.r * ((self.s_in - s1) * mu.derivative(s1) - (mu.eval(s1) - self.alpha1)) + self.d;
            let b = (1.0 - self.r) * ((self.s_in - s2) * mu.derivative(s2) - (mu.eval(s2) - self.alpha2)) + self.d;
            let det = a * b - self.d * self.d;
            if det == 0.0 {
                break;
            }
            let t1 = s1 - (b * f1 + self.d * f2) / det;
            let t2 = s2 - (self.d * f1 + a * f2) / det;
            let norm = self.balance_norm(t1, t2);
            if !(norm < best) {
                break;
            }
            (s1, s2, best) = (t1, t2, norm);
        }
        (s1, s2)
    }

    // Moves a root estimate to the double nearest a sign change of g.
    fn polish(&self, s1: f64, floor: f64, peak: f64) -> f64 {
        let g0 = self.g(s1);
        if g0 == 0.0 {
            return s1;
        }
        let mut delta = 4.0 * f64::EPSILON * s1.abs().max(1.0);
        while delta < 1e-3 * (peak - floor).max(f64::MIN_POSITIVE) {
            let (a, b) = ((s1 - delta).max(floor), (s1 + delta).min(peak));
            let (ga, gb) = (self.g(a), self.g(b));
            if ga.signum() != g0.signum() {
                return roots::bisect(|s| self.g(s), a, s1, 0.0);
            }
            if gb.signum() != g0.signum() {
                return roots::bisect(|s| self.g(s), s1, b, 0.0);
            }
            delta *= 2.0;
        }
        s1
    }
}

pub fn evaluate_g(maps: &CouplingMaps, s1: f64) -> f64 {
    maps.g(s1)
}

pub fn evaluate_phi1(maps: &CouplingMaps, s2: f64) -> f64 {
    maps.phi1(s2)
}

pub fn evaluate_phi2(maps: &CouplingMaps, s1: f64) -> f64 {
    maps.phi2(s1)
}

/// Steady state of `config`, dispatching on the variant.
pub fn equilibrium(config: &Configuration, law: &GrowthLaw, s_in: f64) -> Result<EquilibriumReport> {
    match *config {
        Configuration::SingleTank => single_equilibrium(s_in, law),
        Configuration::Serial { r } => serial_equilibrium(s_in, r, law),
        Configuration::ParallelDiffusion(p) => parallel_equilibrium(s_in, p.r, p.alpha, p.d, law),
    }
}

pub fn washout_equilibrium(config: &Configuration, s_in: f64) -> Result<EquilibriumReport> {
    let system = Chemostat::new(*config, GrowthLaw::UNIT_LINEAR, s_in)?;
    let state = NetworkState::washout(config, s_in);
    Ok(EquilibriumReport::assemble(&system, EquilibriumKind::Washout, state))
}

pub fn single_equilibrium(s_in: f64, law: &GrowthLaw) -> Result<EquilibriumReport> {
    check_input(s_in)?;
    let system = Chemostat::new(Configuration::SingleTank, *law, s_in)?;
    let mut flags = Vec::new();
    let (kind, state) = match law.break_even(1.0) {
        Some(s) if s < s_in => (EquilibriumKind::NonTrivial, NetworkState::single(s, s_in - s)),
        found => {
            if found.is_none() {
                flags.push(Flag::UnreachableDilution { dilution: 1.0 });
            }
            (EquilibriumKind::Washout, NetworkState::single(s_in, 0.0))
        }
    };
    let mut report = EquilibriumReport::assemble(&system, kind, state);
    report.flags = flags;
    Ok(report)
}

/// Closed-form tank-2 substrate of the linear serial cascade: the smaller
/// root of `s2^2 - (s_in + 1/(1-r)) s2 + 1/(r(1-r)) = 0`.
pub fn serial_tank2_closed_form(s_in: f64, r: f64) -> f64 {
    let b = s_in + 1.0 / (1.0 - r);
    let c = 1.0 / (r * (1.0 - r));
    2.0 * c / (b + (b * b - 4.0 * c).sqrt())
}

pub fn serial_equilibrium(s_in: f64, r: f64, law: &GrowthLaw) -> Result<EquilibriumReport> {
    check_input(s_in)?;
    let system = Chemostat::new(Configuration::serial(r)?, *law, s_in)?;
    let (dil1, dil2) = (1.0 / r, 1.0 / (1.0 - r));
    let mut flags = Vec::new();
    let mut alternatives = Vec::new();

    let tank1 = law.break_even(dil1);
    if tank1.is_none() {
        flags.push(Flag::UnreachableDilution { dilution: dil1 });
    }
    let (kind, state) = match tank1 {
        Some(s1) if s1 < s_in => {
            // tank 2 balance with x2 = s_in - s2:
            // mu(s2)(s_in - s2) = (s1 - s2) / (1 - r), bracketed by (0, s1)
            let h = |s2: f64| law.eval(s2) * (s_in - s2) - (s1 - s2) * dil2;
            let (roots, _) = roots::all_roots(h, 0.0, s1, COARSE_SCAN);
            let mut roots = roots.into_iter();
            // h(0) < 0 < h(s1), so at least one crossing is always present
            let s2 = roots.next().unwrap_or_else(|| roots::bisect(h, 0.0, s1, 0.0));
            alternatives.extend(roots.map(|s| NetworkState::pair(s1, s_in - s1, s, s_in - s)));
            (EquilibriumKind::NonTrivial, NetworkState::pair(s1, s_in - s1, s2, s_in - s2))
        }
        _ => {
            flags.push(Flag::CascadedWashout);
            match law.break_even(dil2) {
                Some(s2) if s2 < s_in => (
                    EquilibriumKind::Tank1Washout,
                    NetworkState::pair(s_in, 0.0, s2, s_in - s2),
                ),
                found => {
                    if found.is_none() {
                        flags.push(Flag::UnreachableDilution { dilution: dil2 });
                    }
                    (EquilibriumKind::Washout, NetworkState::washout(&system.config, s_in))
                }
            }
        }
    };
    if !alternatives.is_empty() {
        flags.push(Flag::MultipleEquilibria {
            count: alternatives.len() + 1,
        });
    }
    let mut report = EquilibriumReport::assemble(&system, kind, state);
    report.flags = flags;
    report.alternatives = alternatives;
    Ok(report)
}

pub fn parallel_equilibrium(
    s_in: f64,
    r: f64,
    alpha: f64,
    d: f64,
    law: &GrowthLaw,
) -> Result<EquilibriumReport> {
    check_input(s_in)?;
    let plant = Parallel::new(r, alpha, d)?;
    let system = Chemostat::new(Configuration::ParallelDiffusion(plant), *law, s_in)?;
    let (oriented, swapped) = plant.oriented();

    let solved = if d == 0.0 {
        isolated_tanks(&oriented, law, s_in)
    } else {
        coupled_tanks(&oriented, law, s_in)?
    };
    let unswap = |st: NetworkState| if swapped { st.swapped() } else { st };
    let kind = match (solved.kind, swapped) {
        (EquilibriumKind::Tank1Washout, true) => EquilibriumKind::Tank2Washout,
        (EquilibriumKind::Tank2Washout, true) => EquilibriumKind::Tank1Washout,
        (k, _) => k,
    };
    let mut report = EquilibriumReport::assemble(&system, kind, unswap(solved.state));
    report.certificate = solved.certificate;
    report.flags = solved.flags;
    report.alternatives = solved.alternatives.into_iter().map(unswap).collect();
    Ok(report)
}

struct Solved {
    kind: EquilibriumKind,
    state: NetworkState,
    certificate: Option<RootCertificate>,
    flags: Vec<Flag>,
    alternatives: Vec<NetworkState>,
}

impl Solved {
    fn plain(kind: EquilibriumKind, state: NetworkState) -> Self {
        Solved {
            kind,
            state,
            certificate: None,
            flags: Vec::new(),
            alternatives: Vec::new(),
        }
    }
}

// d = 0: each tank is a standalone chemostat with dilution alpha_i.
fn isolated_tanks(p: &Parallel, law: &GrowthLaw, s_in: f64) -> Solved {
    let mut flags = Vec::new();
    let mut tank = |dilution: f64| match law.break_even(dilution) {
        Some(s) => s.min(s_in),
        None => {
            flags.push(Flag::UnreachableDilution { dilution });
            s_in
        }
    };
    let (s1, s2) = (tank(p.alpha1()), tank(p.alpha2()));
    let kind = match (s1 < s_in, s2 < s_in) {
        (true, true) => EquilibriumKind::NonTrivial,
        (false, true) => EquilibriumKind::Tank1Washout,
        (true, false) => EquilibriumKind::Tank2Washout,
        (false, false) => EquilibriumKind::Washout,
    };
    let mut solved = Solved::plain(kind, NetworkState::pair(s1, s_in - s1, s2, s_in - s2));
    solved.flags = flags;
    solved
}

/// Largest growth rate of a small biomass inoculum at washout. Positive
/// means the washout steady state repels biomass.
pub fn washout_invasion_rate(p: &Parallel, law: &GrowthLaw, s_in: f64) -> f64 {
    let mu = law.eval(s_in);
    let (e1, e2) = (p.d / p.r, p.d / (1.0 - p.r));
    let m11 = mu - p.alpha1() - e1;
    let m22 = mu - p.alpha2() - e2;
    // Metzler matrix: the dominant eigenvalue is real
    0.5 * (m11 + m22) + (0.25 * (m11 - m22).powi(2) + e1 * e2).sqrt()
}

// d > 0, labelling with alpha2 >= alpha1.
//
// Roots are searched in s2 rather than s1: every positive steady state has
// s1 on the rising branch of phi2, and there k(s2) = phi1(s2) - phi2^-1(s2)
// is concave and crosses zero with slope of order 1/d. In s1 the positive
// part of g shrinks to a window of width of order d^2, which a scan misses
// for small d. Each root is then polished on g itself.
fn coupled_tanks(p: &Parallel, law: &GrowthLaw, s_in: f64) -> Result<Solved> {
    let maps = CouplingMaps::new(s_in, p, *law)?;
    let washout = Solved::plain(EquilibriumKind::Washout, NetworkState::pair(s_in, 0.0, s_in, 0.0));
    let pair = |s1: f64, s2: f64| NetworkState::pair(s1, s_in - s1, s2, s_in - s2);
    let certify = |s1: f64| RootCertificate {
        g: maps.g(s1),
        g_prime: maps.g_prime(s1),
    };

    if law.is_unit_linear() && p.is_balanced() && s_in > 1.0 {
        let mut solved = Solved::plain(EquilibriumKind::NonTrivial, pair(1.0, 1.0));
        solved.certificate = Some(certify(1.0));
        return Ok(solved);
    }

    // tank 1 must sit above its own break-even level
    let floor = match law.break_even(p.alpha1()) {
        Some(b) if b < s_in => b,
        _ => return Ok(washout),
    };
    let peak = maps.rising_end(floor);
    let ceiling = law
        .break_even(p.alpha2())
        .unwrap_or(f64::INFINITY)
        .min(maps.phi2(peak));
    // k(s_in) = 0 when phi2 rises all the way: that is the washout root
    let eps = 1e-10 * s_in.max(1.0);
    let hi = if ceiling < s_in { ceiling } else { s_in - eps };
    let lo = floor;
    if !(lo < hi) {
        return Ok(washout);
    }

    let k = |s2: f64| {
        let s1 = maps.phi2_inverse(s2, floor, peak);
        maps.step2(s1) + maps.step1(s2)
    };
    let mut n = COARSE_SCAN;
    let mut found: Vec<f64> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..3 {
        let (roots, samples) = roots::all_roots(k, lo, hi, n);
        trace = samples;
        found = roots
            .into_iter()
            .map(|s2| maps.polish(maps.phi2_inverse(s2, floor, peak), floor, peak))
            .filter(|&s1| {
                let s2 = maps.phi2(s1);
                s1 > 0.0 && s1 < s_in && s2 > 0.0 && s2 < s_in
            })
            .collect();
        if !found.is_empty() {
            break;
        }
        n *= 16;
    }

    if found.is_empty() {
        if washout_invasion_rate(p, law, s_in) <= 0.0 {
            return Ok(washout);
        }
        return Err(Error::NoSignChange { lo, hi, scan: trace });
    }

    let primary = found
        .iter()
        .position(|&s1| maps.g_prime(s1) > 0.0)
        .unwrap_or(0);
    let s1 = found.remove(primary);
    let (s1, s2) = maps.refine(s1, maps.phi2(s1));
    let mut solved = Solved::plain(EquilibriumKind::NonTrivial, pair(s1, s2));
    solved.certificate = Some(certify(s1));
    if !found.is_empty() {
        solved.flags.push(Flag::MultipleEquilibria {
            count: found.len() + 1,
        });
    }
    solved.alternatives = found
        .into_iter()
        .map(|s| {
            let (a, b) = maps.refine(s, maps.phi2(s));
            pair(a, b)
        })
        .collect();
    Ok(solved)
}

fn check_input(s_in: f64) -> Result<()> {
    if s_in > 0.0 && s_in.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("s_in", s_in, "must be positive and finite"))
    }
}
