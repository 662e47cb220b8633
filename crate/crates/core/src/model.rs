//! Growth laws, configurations and the compartment vector fields.
//!
//! All quantities are dimensionless: concentrations are scaled by
//! `m V / Q` and time is measured in units where `Q = V`. In these units the
//! single tank has dilution rate 1, serial tank `i` has dilution `1 / r_i`
//! and parallel tank `i` sees `alpha_i` (`alpha / r` or
//! `(1 - alpha) / (1 - r)`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Specific growth rate of the biomass as a function of substrate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GrowthLaw {
    /// `mu(s) = m s`
    Linear { m: f64 },
    /// `mu(s) = mu_max s / (k + s)`
    Monod { mu_max: f64, k: f64 },
}

impl GrowthLaw {
    /// The dimensionless linear law `mu(s) = s` all closed forms are written for.
    pub const UNIT_LINEAR: GrowthLaw = GrowthLaw::Linear { m: 1.0 };

    pub fn linear(m: f64) -> Result<Self> {
        let law = GrowthLaw::Linear { m };
        law.validate()?;
        Ok(law)
    }

    pub fn monod(mu_max: f64, k: f64) -> Result<Self> {
        let law = GrowthLaw::Monod { mu_max, k };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GrowthLaw::Linear { m } => positive("m", m),
            GrowthLaw::Monod { mu_max, k } => {
                positive("mu_max", mu_max)?;
                positive("k", k)
            }
        }
    }

    /// True for `mu(s) = s`, the law under which the closed-form results hold.
    pub fn is_unit_linear(&self) -> bool {
        matches!(*self, GrowthLaw::Linear { m } if m == 1.0)
    }

    pub fn growth_rate(&self, s: f64) -> Result<f64> {
        if s < 0.0 || s.is_nan() {
            return Err(Error::NegativeConcentration(s));
        }
        Ok(self.eval(s))
    }

    /// Unchecked evaluation; also used at slightly negative trial points
    /// inside the integrator and finite-difference stencils.
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            GrowthLaw::Linear { m } => m * s,
            GrowthLaw::Monod { mu_max, k } => mu_max * s / (k + s),
        }
    }

    #[inline]
    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            GrowthLaw::Linear { m } => m,
            GrowthLaw::Monod { mu_max, k } => mu_max * k / ((k + s) * (k + s)),
        }
    }

    /// Concentration at which the growth rate equals `rate`, i.e. the
    /// break-even substrate level of a tank with that dilution rate.
    /// `None` when the law never reaches `rate`.
    pub fn break_even(&self, rate: f64) -> Option<f64> {
        if rate <= 0.0 {
            return Some(0.0);
        }
        match *self {
            GrowthLaw::Linear { m } => Some(rate / m),
            GrowthLaw::Monod { mu_max, .. } => {
                if rate >= mu_max {
                    return None;
                }
                let mut hi = 1.0;
                while self.eval(hi) < rate {
                    hi *= 2.0;
                }
                Some(crate::roots::bisect(|s| self.eval(s) - rate, 0.0, hi, 0.0))
            }
        }
    }
}

/// Compartment layout, used when building a configuration from physical data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Single,
    Serial,
    Parallel,
}

/// Dimensional description of a plant before scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalScenario {
    pub layout: Layout,
    /// Volumetric flow.
    pub q: f64,
    /// Total volume.
    pub v: f64,
    /// Volume of the first compartment (two-compartment layouts).
    #[serde(default)]
    pub v1: f64,
    /// Input substrate concentration.
    pub s_in: f64,
    /// Fraction of the inflow routed to compartment 1 (parallel).
    #[serde(default)]
    pub alpha: f64,
    /// Diffusive exchange flow (parallel).
    #[serde(default)]
    pub d: f64,
    /// Slope used for the concentration scale `m V / Q`. Defaults to `m` for
    /// the linear law and to the initial slope `mu_max / k` for Monod.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration_slope: Option<f64>,
}

/// Scaled problem: configuration, input concentration and growth law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimensionless {
    pub config: Configuration,
    pub s_in: f64,
    pub law: GrowthLaw,
}

pub fn nondimensionalize(phys: &PhysicalScenario, law: &GrowthLaw) -> Result<Dimensionless> {
    law.validate()?;
    positive("Q", phys.q)?;
    positive("V", phys.v)?;
    if !(phys.s_in >= 0.0) {
        return Err(Error::invalid("S_in", phys.s_in, "must be nonnegative"));
    }
    let slope = match (phys.concentration_slope, *law) {
        (Some(m), _) => {
            positive("concentration_slope", m)?;
            m
        }
        (None, GrowthLaw::Linear { m }) => m,
        (None, GrowthLaw::Monod { mu_max, k }) => mu_max / k,
    };
    let residence = phys.v / phys.q;
    let scale = slope * residence;
    let scaled_law = match *law {
        GrowthLaw::Linear { m } => GrowthLaw::Linear {
            m: m / slope,
        },
        GrowthLaw::Monod { mu_max, k } => GrowthLaw::Monod {
            mu_max: mu_max * residence,
            k: k * scale,
        },
    };
    let two_tank_ratio = || -> Result<f64> {
        if !(phys.v1 > 0.0 && phys.v1 < phys.v) {
            return Err(Error::invalid("V1", phys.v1, "must lie strictly between 0 and V"));
        }
        Ok(phys.v1 / phys.v)
    };
    let config = match phys.layout {
        Layout::Single => Configuration::SingleTank,
        Layout::Serial => Configuration::serial(two_tank_ratio()?)?,
        Layout::Parallel => {
            if !(phys.d >= 0.0) {
                return Err(Error::invalid("d", phys.d, "diffusive flow must be nonnegative"));
            }
            Configuration::parallel(two_tank_ratio()?, phys.alpha, phys.d / phys.q)?
        }
    };
    Ok(Dimensionless {
        config,
        s_in: scale * phys.s_in,
        law: scaled_law,
    })
}

/// Two tanks in parallel, fed with fractions `alpha` and `1 - alpha` of the
/// flow and exchanging by diffusion at rate `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parallel {
    pub r: f64,
    pub alpha: f64,
    pub d: f64,
}

impl Parallel {
    pub fn new(r: f64, alpha: f64, d: f64) -> Result<Self> {
        let p = Parallel { r, alpha, d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        volume_fraction(self.r)?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha", self.alpha, "must lie in [0, 1]"));
        }
        if !(self.d >= 0.0) || !self.d.is_finite() {
            return Err(Error::invalid("d", self.d, "must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Dilution rate of tank 1.
    pub fn alpha1(&self) -> f64 {
        self.alpha / self.r
    }

    /// Dilution rate of tank 2.
    pub fn alpha2(&self) -> f64 {
        (1.0 - self.alpha) / (1.0 - self.r)
    }

    /// Same plant with compartment labels exchanged.
    pub fn swapped(&self) -> Self {
        Parallel {
            r: 1.0 - self.r,
            alpha: 1.0 - self.alpha,
            d: self.d,
        }
    }

    /// Labelling with `alpha2 >= alpha1`, and whether a swap was needed.
    pub fn oriented(&self) -> (Self, bool) {
        if self.alpha2() >= self.alpha1() {
            (*self, false)
        } else {
            (self.swapped(), true)
        }
    }

    /// `alpha1 == alpha2`, i.e. `alpha == r` up to rounding.
    pub fn is_balanced(&self) -> bool {
        let (a1, a2) = (self.alpha1(), self.alpha2());
        (a1 - a2).abs() <= 1e-14 * a1.max(a2).max(1.0)
    }

    pub fn with_d(&self, d: f64) -> Self {
        Parallel { d, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Configuration {
    SingleTank,
    Serial { r: f64 },
    ParallelDiffusion(Parallel),
}

impl Configuration {
    pub fn serial(r: f64) -> Result<Self> {
        volume_fraction(r)?;
        Ok(Configuration::Serial { r })
    }

    pub fn parallel(r: f64, alpha: f64, d: f64) -> Result<Self> {
        Ok(Configuration::ParallelDiffusion(Parallel::new(r, alpha, d)?))
    }

    /// Parallel tanks with `alpha = 0`: a stirred tank of volume `(1 - r) V`
    /// exchanging with an unfed dead zone of volume `r V`.
    pub fn dead_zone(r: f64, d: f64) -> Result<Self> {
        Self::parallel(r, 0.0, d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Configuration::SingleTank => Ok(()),
            Configuration::Serial { r } => volume_fraction(*r),
            Configuration::ParallelDiffusion(p) => p.validate(),
        }
    }

    /// Number of state components: 2 for a single tank, 4 otherwise.
    pub fn dim(&self) -> usize {
        match self {
            Configuration::SingleTank => 2,
            _ => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Configuration::SingleTank => "single",
            Configuration::Serial { .. } => "serial",
            Configuration::ParallelDiffusion(_) => "parallel",
        }
    }
}

/// Concentrations in the layout `(s1, x1, s2, x2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkState {
    Pair { s1: f64, x1: f64, s2: f64, x2: f64 },
    Single { s: f64, x: f64 },
}

impl NetworkState {
    pub fn single(s: f64, x: f64) -> Self {
        NetworkState::Single { s, x }
    }

    pub fn pair(s1: f64, x1: f64, s2: f64, x2: f64) -> Self {
        NetworkState::Pair { s1, x1, s2, x2 }
    }

    /// Washout state of a configuration.
    pub fn washout(config: &Configuration, s_in: f64) -> Self {
        match config {
            Configuration::SingleTank => Self::single(s_in, 0.0),
            _ => Self::pair(s_in, 0.0, s_in, 0.0),
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        match *values {
            [s, x] => Ok(Self::single(s, x)),
            [s1, x1, s2, x2] => Ok(Self::pair(s1, x1, s2, x2)),
            _ => Err(Error::DimensionMismatch {
                expected: 4,
                found: values.len(),
            }),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NetworkState::Single { .. } => 2,
            NetworkState::Pair { .. } => 4,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            NetworkState::Single { s, x } => vec![s, x],
            NetworkState::Pair { s1, x1, s2, x2 } => vec![s1, x1, s2, x2],
        }
    }

    /// Substrate concentrations, one per tank.
    pub fn substrates(&self) -> Vec<f64> {
        match *self {
            NetworkState::Single { s, .. } => vec![s],
            NetworkState::Pair { s1, s2, .. } => vec![s1, s2],
        }
    }

    /// Biomass concentrations, one per tank.
    pub fn biomasses(&self) -> Vec<f64> {
        match *self {
            NetworkState::Single { x, .. } => vec![x],
            NetworkState::Pair { x1, x2, .. } => vec![x1, x2],
        }
    }

    /// Mass-balance deviations `z_i = s_in - x_i - s_i`.
    pub fn mass_deviation(&self, s_in: f64) -> Vec<f64> {
        mass_deviation(&self.to_vec(), s_in)
    }

    pub fn max_abs_diff(&self, other: &NetworkState) -> f64 {
        self.to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Exchanges the labels of the two tanks.
    pub fn swapped(&self) -> Self {
        match *self {
            NetworkState::Pair { s1, x1, s2, x2 } => Self::pair(s2, x2, s1, x1),
            single => single,
        }
    }
}

pub(crate) fn mass_deviation(y: &[f64], s_in: f64) -> Vec<f64> {
    y.chunks_exact(2).map(|c| s_in - c[0] - c[1]).collect()
}

/// The closed ODE system of one configuration at a given input level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chemostat {
    pub config: Configuration,
    pub law: GrowthLaw,
    pub s_in: f64,
}

impl Chemostat {
    pub fn new(config: Configuration, law: GrowthLaw, s_in: f64) -> Result<Self> {
        config.validate()?;
        law.validate()?;
        if !(s_in >= 0.0) || !s_in.is_finite() {
            return Err(Error::invalid("s_in", s_in, "must be finite and nonnegative"));
        }
        Ok(Chemostat { config, law, s_in })
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    /// Right-hand side without domain checks. `y` and `dy` must have length
    /// `self.dim()`.
    pub fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let mu = &self.law;
        let s_in = self.s_in;
        match self.config {
            Configuration::SingleTank => {
                let (s, x) = (y[0], y[1]);
                let growth = mu.eval(s) * x;
                dy[0] = -growth + (s_in - s);
                dy[1] = growth - x;
            }
            Configuration::Serial { r } => {
                let (s1, x1, s2, x2) = (y[0], y[1], y[2], y[3]);
                let (d1, d2) = (1.0 / r, 1.0 / (1.0 - r));
                let g1 = mu.eval(s1) * x1;
                let g2 = mu.eval(s2) * x2;
                dy[0] = -g1 + d1 * (s_in - s1);
                dy[1] = g1 - d1 * x1;
                dy[2] = -g2 + d2 * (s1 - s2);
                dy[3] = g2 + d2 * (x1 - x2);
            }
            Configuration::ParallelDiffusion(p) => {
                let (s1, x1, s2, x2) = (y[0], y[1], y[2], y[3]);
                let (a1, a2) = (p.alpha1(), p.alpha2());
                let (e1, e2) = (p.d / p.r, p.d / (1.0 - p.r));
                let g1 = mu.eval(s1) * x1;
                let g2 = mu.eval(s2) * x2;
                dy[0] = -g1 + a1 * (s_in - s1) + e1 * (s2 - s1);
                dy[1] = g1 - a1 * x1 + e1 * (x2 - x1);
                dy[2] = -g2 + a2 * (s_in - s2) + e2 * (s1 - s2);
                dy[3] = g2 - a2 * x2 + e2 * (x1 - x2);
            }
        }
    }

    /// Max-norm of the vector field at `y`.
    pub fn residual(&self, y: &[f64]) -> f64 {
        let mut dy = [0.0; 4];
        let n = self.dim();
        self.rhs(y, &mut dy[..n]);
        dy[..n].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Output substrate concentration of a state.
    pub fn s_out(&self, state: &NetworkState) -> f64 {
        match (*state, self.config) {
            (NetworkState::Single { s, .. }, _) => s,
            (NetworkState::Pair { s2, .. }, Configuration::Serial { .. }) => s2,
            (NetworkState::Pair { s1, s2, .. }, Configuration::ParallelDiffusion(p)) => {
                p.alpha * s1 + (1.0 - p.alpha) * s2
            }
            (NetworkState::Pair { s1, .. }, Configuration::SingleTank) => s1,
        }
    }
}

/// Evaluates the vector field of `config` at `state`.
pub fn vector_field(
    config: &Configuration,
    law: &GrowthLaw,
    state: &NetworkState,
    s_in: f64,
) -> Result<NetworkState> {
    let system = Chemostat::new(*config, *law, s_in)?;
    if state.dim() != system.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            found: state.dim(),
        });
    }
    let y = state.to_vec();
    if let Some(&neg) = y.iter().find(|v| **v < 0.0) {
        return Err(Error::NegativeConcentration(neg));
    }
    let mut dy = vec![0.0; y.len()];
    system.rhs(&y, &mut dy);
    NetworkState::from_slice(&dy)
}

pub fn growth_rate(law: &GrowthLaw, s: f64) -> Result<f64> {
    law.validate()?;
    law.growth_rate(s)
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, v, "must be positive and finite"))
    }
}

fn volume_fraction(r: f64) -> Result<()> {
    if r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("r", r, "volume fraction must lie strictly in (0, 1)"))
    }
}
