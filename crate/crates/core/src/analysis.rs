//! Thresholds on the input concentration, the response of the parallel
//! output to the diffusion rate, and comparisons between configurations.
//!
//! Every threshold is expressed through the break-even level `b(y)`, the
//! substrate concentration at which the growth rate equals the dilution
//! rate `y`. For the linear law `b(y) = y` and the formulas collapse to the
//! familiar closed forms.

use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{parallel_equilibrium, serial_equilibrium, single_equilibrium, EquilibriumKind, EquilibriumReport};
use crate::error::{Error, Result};
use crate::model::{Configuration, GrowthLaw, Parallel};
use crate::roots;

pub const DEFAULT_D_MIN: f64 = 1e-3;
pub const DEFAULT_D_MAX: f64 = 1e4;
pub const DEFAULT_CURVE_POINTS: usize = 64;
/// Relative bracket width at which the minimiser search stops.
pub const D_STAR_REL_TOL: f64 = 1e-8;
/// Margin below the single-tank output required to declare a winner.
pub const TIE_TOL: f64 = 1e-9;

const GRID_EXTENSIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    ClosedForm,
    /// Break-even levels and a bisection; no closed form exists.
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub r: f64,
    pub alpha: f64,
    /// Input level above which parallel tanks without diffusion do no better
    /// than the single tank. `None` when that never happens.
    pub sin0: Option<f64>,
    /// Input level above which some diffusion lowers the parallel output.
    pub sin_lower: f64,
    /// Input level at which serial and parallel layouts swap roles.
    pub sin_crossover: f64,
    pub method: ThresholdMethod,
}

fn oriented(r: f64, alpha: f64) -> Result<Parallel> {
    Ok(Parallel::new(r, alpha, 0.0)?.oriented().0)
}

/// `(r - alpha^2) / (r (1 - alpha))` in the labelling with `alpha2 >= alpha1`.
pub fn threshold_sin0(r: f64, alpha: f64) -> Result<f64> {
    let p = oriented(r, alpha)?;
    let (r, a) = (p.r, p.alpha);
    Ok((r - a * a) / (r * (1.0 - a)))
}

/// Harmonic mean of the two dilution rates.
pub fn threshold_underline_sin(r: f64, alpha: f64) -> Result<f64> {
    let p = Parallel::new(r, alpha, 0.0)?;
    let (a1, a2) = (p.alpha1(), p.alpha2());
    Ok(2.0 * a1 * a2 / (a1 + a2))
}

/// Single-tank output level `b(1)`.
pub fn single_tank_level(law: &GrowthLaw) -> Result<f64> {
    law.break_even(1.0).ok_or(Error::Unsupported {
        operation: "threshold analysis",
        requirement: "a growth law reaching the single-tank dilution rate",
    })
}

/// Input level where the large-diffusion parallel output crosses the
/// single-tank output: `b(1) + 1 / mu'(b(1))`.
pub fn crossover(law: &GrowthLaw) -> Result<f64> {
    let level = single_tank_level(law)?;
    Ok(level + 1.0 / law.derivative(level))
}

pub fn thresholds(r: f64, alpha: f64, law: &GrowthLaw) -> Result<ThresholdSet> {
    law.validate()?;
    if law.is_unit_linear() {
        return Ok(ThresholdSet {
            r,
            alpha,
            sin0: Some(threshold_sin0(r, alpha)?),
            sin_lower: threshold_underline_sin(r, alpha)?,
            sin_crossover: 2.0,
            method: ThresholdMethod::ClosedForm,
        });
    }
    let p = oriented(r, alpha)?;
    Ok(ThresholdSet {
        r,
        alpha,
        sin0: general_sin0(&p, law)?,
        sin_lower: general_sin_lower(&p, law)?,
        sin_crossover: crossover(law)?,
        method: ThresholdMethod::Numeric,
    })
}

// Above b(1) the output without diffusion is affine in s_in until tank 2
// comes alive at b(alpha2), then constant.
fn general_sin0(p: &Parallel, law: &GrowthLaw) -> Result<Option<f64>> {
    let one = single_tank_level(law)?;
    let b1 = law.break_even(p.alpha1()).unwrap_or(one);
    let level = (one - p.alpha * b1) / (1.0 - p.alpha);
    Ok(match law.break_even(p.alpha2()) {
        Some(b2) if level > b2 => None,
        _ => Some(level),
    })
}

// Sign of the slope of s_out at d = 0+, as a function of s_in. It is
// positive just above b(alpha1) and strictly decreasing while tank 2 is
// washed out.
fn general_sin_lower(p: &Parallel, law: &GrowthLaw) -> Result<f64> {
    single_tank_level(law)?;
    let (a1, a2) = (p.alpha1(), p.alpha2());
    let s1 = law.break_even(a1).expect("alpha1 <= 1 is reachable");
    if p.is_balanced() || p.alpha == 0.0 {
        return Ok(s1);
    }
    let b2 = law.break_even(a2);
    let slope = |s: f64| {
        let s2 = match b2 {
            Some(b) if b < s => b,
            _ => s,
        };
        let a = p.r * ((s - s1) * law.derivative(s1) - (law.eval(s1) - a1));
        let b = (1.0 - p.r) * ((s - s2) * law.derivative(s2) - (law.eval(s2) - a2));
        p.alpha * b - (1.0 - p.alpha) * a
    };
    let mut hi = (2.0 * s1).max(1.0);
    while slope(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Unsupported {
                operation: "lower threshold search",
                requirement: "a sign change of the diffusion slope below 1e12",
            });
        }
    }
    Ok(roots::bisect(slope, s1, hi, 0.0))
}

/// Sensitivities of a parallel steady state to the diffusion rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionDerivative {
    pub ds1: f64,
    pub ds2: f64,
    pub dsout: f64,
    pub sigma: f64,
    pub det_gamma: f64,
    pub a: f64,
    pub b: f64,
}

/// Implicit differentiation of the parallel steady state with respect to
/// `d`. At `d = 0` this is the right derivative.
pub fn dsout_dd(eq: &EquilibriumReport, law: &GrowthLaw) -> Result<DiffusionDerivative> {
    let p = match eq.config {
        Configuration::ParallelDiffusion(p) => p,
        _ => {
            return Err(Error::Unsupported {
                operation: "diffusion derivative",
                requirement: "a parallel configuration",
            })
        }
    };
    if eq.kind == EquilibriumKind::Washout {
        return Err(Error::Unsupported {
            operation: "diffusion derivative",
            requirement: "an equilibrium with biomass",
        });
    }
    let (s_in, r, d) = (eq.s_in, p.r, p.d);
    let (a1, a2) = (p.alpha1(), p.alpha2());
    let s1 = eq.s1();
    let s2 = eq.s2().expect("parallel state has two tanks");
    let a = r * ((s_in - s1) * law.derivative(s1) - (law.eval(s1) - a1));
    let b = (1.0 - r) * ((s_in - s2) * law.derivative(s2) - (law.eval(s2) - a2));
    // -(A + d)(B + d) + d^2 without the d^2 cancellation
    let det_gamma = -(a * b + d * (a + b));
    if !(det_gamma < 0.0) {
        return Err(Error::BrokenCertificate { det_gamma });
    }
    let gap = s2 - s1;
    Ok(DiffusionDerivative {
        ds1: gap * (-b) / det_gamma,
        ds2: gap * a / det_gamma,
        dsout: gap * (p.alpha * b - (1.0 - p.alpha) * a) / (-det_gamma),
        sigma: a1 * (s_in - 2.0 * s2) - a2 * (s_in - 2.0 * s1),
        det_gamma,
        a,
        b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DStar {
    /// `confirmed` is set when the diffusion slope changes sign across the
    /// final bracket.
    Finite { d: f64, s_out: f64, confirmed: bool },
    /// The output keeps decreasing; `infimum` is its limit.
    Infinite { infimum: f64 },
}

impl DStar {
    pub fn is_finite(&self) -> bool {
        matches!(self, DStar::Finite { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    pub d_min: f64,
    pub d_max: f64,
    /// Log-spaced samples on `[d_min, d_max]`; `d = 0` is added in front.
    pub n_samples: usize,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions {
            d_min: DEFAULT_D_MIN,
            d_max: DEFAULT_D_MAX,
            n_samples: DEFAULT_CURVE_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionCurve {
    pub s_in: f64,
    pub r: f64,
    pub alpha: f64,
    pub d_grid: Vec<f64>,
    pub s_out_values: Vec<f64>,
    /// Slope of the output at each grid point, where defined.
    pub derivatives: Vec<Option<f64>>,
    pub d_star: DStar,
    pub s_out_min: f64,
    pub monotone_decreasing: bool,
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

fn curve_point(s_in: f64, p: &Parallel, law: &GrowthLaw, d: f64) -> Result<(f64, Option<f64>)> {
    let eq = parallel_equilibrium(s_in, p.r, p.alpha, d, law).map_err(|e| e.at("d", d))?;
    let slope = if eq.kind == EquilibriumKind::Washout {
        None
    } else if d == 0.0 {
        // a tank sitting exactly on its washout boundary has no slope
        dsout_dd(&eq, law).ok().map(|v| v.dsout)
    } else {
        Some(dsout_dd(&eq, law).map_err(|e| e.at("d", d))?.dsout)
    };
    Ok((eq.s_out, slope))
}

/// Samples `d -> s_out*(d)` and locates its minimiser.
pub fn diffusion_curve(s_in: f64, r: f64, alpha: f64, law: &GrowthLaw, opts: &CurveOptions) -> Result<DiffusionCurve> {
    let p = Parallel::new(r, alpha, 0.0)?;
    let level = single_tank_level(law)?;
    if !(s_in > level) {
        return Err(Error::invalid("s_in", s_in, "must exceed the single-tank break-even level"));
    }
    if opts.n_samples < 16 {
        return Err(Error::invalid("n_samples", opts.n_samples as f64, "at least 16 samples are needed"));
    }
    if !(opts.d_min > 0.0 && opts.d_max > opts.d_min && opts.d_max.is_finite()) {
        return Err(Error::invalid("d_max", opts.d_max, "need 0 < d_min < d_max < inf"));
    }

    let mut d_grid = vec![0.0];
    d_grid.extend(log_grid(opts.d_min, opts.d_max, opts.n_samples));
    let mut values = Vec::with_capacity(d_grid.len());
    let mut slopes = Vec::with_capacity(d_grid.len());
    for &d in &d_grid {
        let (v, s) = curve_point(s_in, &p, law, d)?;
        values.push(v);
        slopes.push(s);
    }
    let monotone_decreasing = d_grid
        .iter()
        .zip(&slopes)
        .filter(|(d, _)| **d > 0.0)
        .all(|(_, s)| matches!(s, Some(v) if *v < 0.0));

    let cross = crossover(law)?;
    let argmin = |values: &[f64]| {
        values
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v < values[best] { i } else { best })
    };
    let mut i = argmin(&values);
    let mut extensions = 0;
    while i == values.len() - 1 && s_in < cross && extensions < GRID_EXTENSIONS {
        // the dip lies beyond the grid
        let last = *d_grid.last().unwrap();
        for d in log_grid(last, 10.0 * last, 17).into_iter().skip(1) {
            let (v, s) = curve_point(s_in, &p, law, d)?;
            d_grid.push(d);
            values.push(v);
            slopes.push(s);
        }
        extensions += 1;
        i = argmin(&values);
    }

    let n = values.len();
    let (d_star, s_out_min) = if i == n - 1 {
        let infimum = if s_in >= cross { level } else { values[i].min(level) };
        (DStar::Infinite { infimum }, infimum)
    } else if i == 0 && !matches!(slopes[0], Some(v) if v < 0.0) {
        let confirmed = slopes[0].is_some();
        (
            DStar::Finite {
                d: 0.0,
                s_out: values[0],
                confirmed,
            },
            values[0],
        )
    } else {
        let (lo, hi) = (d_grid[i.saturating_sub(1)], d_grid[i + 1]);
        let failure = RefCell::new(None);
        let f = |d: f64| match parallel_equilibrium(s_in, r, alpha, d, law) {
            Ok(eq) => eq.s_out,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e.at("d", d));
                f64::INFINITY
            }
        };
        let (d, v) = roots::golden_section(f, lo, hi, D_STAR_REL_TOL, opts.d_min);
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        let (d, v) = if v <= values[i] { (d, v) } else { (d_grid[i], values[i]) };
        let below = if i == 0 { slopes[0] } else { slopes[i - 1] };
        let confirmed = matches!(below, Some(s) if s < 0.0) && matches!(slopes[i + 1], Some(s) if s > 0.0);
        (DStar::Finite { d, s_out: v, confirmed }, v)
    };

    Ok(DiffusionCurve {
        s_in,
        r,
        alpha,
        d_grid,
        s_out_values: values,
        derivatives: slopes,
        d_star,
        s_out_min,
        monotone_decreasing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonVerdict {
    SerialWins,
    ParallelWins,
    SingleOrTie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SerialBest {
    pub r: f64,
    pub s_out: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParallelBest {
    pub r: f64,
    pub alpha: f64,
    pub d: f64,
    pub s_out: f64,
    /// Output of the same split without diffusion.
    pub s_out_without_diffusion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub s_in: f64,
    pub single: f64,
    pub serial: SerialBest,
    pub parallel: ParallelBest,
    pub verdict: ComparisonVerdict,
    /// Single-tank output minus the winner's output (0 for a tie).
    pub margin: f64,
    /// The parallel layout only beats the single tank thanks to diffusion.
    pub requires_diffusion: bool,
}

/// Best output of each configuration family over the supplied grids.
pub fn compare_configurations(
    s_in: f64,
    law: &GrowthLaw,
    r_grid: &[f64],
    alpha_grid: &[f64],
    d_grid: &[f64],
) -> Result<ComparisonReport> {
    if r_grid.is_empty() {
        return Err(Error::EmptyGrid("r"));
    }
    if alpha_grid.is_empty() {
        return Err(Error::EmptyGrid("alpha"));
    }
    if d_grid.is_empty() {
        return Err(Error::EmptyGrid("d"));
    }
    let single = single_equilibrium(s_in, law)?.s_out;

    let serial = r_grid
        .par_iter()
        .map(|&r| serial_equilibrium(s_in, r, law).map(|eq| SerialBest { r, s_out: eq.s_out }).map_err(|e| e.at("r", r)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(None::<SerialBest>, |best, c| match best {
            Some(b) if b.s_out <= c.s_out => Some(b),
            _ => Some(c),
        })
        .unwrap();

    let pairs: Vec<(f64, f64)> = r_grid
        .iter()
        .flat_map(|&r| alpha_grid.iter().map(move |&a| (r, a)))
        .collect();
    let parallel = pairs
        .par_iter()
        .map(|&(r, alpha)| -> Result<ParallelBest> {
            let at_zero = parallel_equilibrium(s_in, r, alpha, 0.0, law)
                .map_err(|e| e.at("alpha", alpha).at("r", r))?
                .s_out;
            let mut best = ParallelBest {
                r,
                alpha,
                d: 0.0,
                s_out: at_zero,
                s_out_without_diffusion: at_zero,
            };
            for &d in d_grid {
                let v = parallel_equilibrium(s_in, r, alpha, d, law)
                    .map_err(|e| e.at("d", d).at("alpha", alpha).at("r", r))?
                    .s_out;
                if v < best.s_out {
                    best.s_out = v;
                    best.d = d;
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(None::<ParallelBest>, |best, c| match best {
            Some(b) if b.s_out <= c.s_out => Some(b),
            _ => Some(c),
        })
        .unwrap();

    let (ms, mp) = (single - serial.s_out, single - parallel.s_out);
    let verdict = if ms.max(mp) <= TIE_TOL {
        ComparisonVerdict::SingleOrTie
    } else if ms >= mp {
        ComparisonVerdict::SerialWins
    } else {
        ComparisonVerdict::ParallelWins
    };
    let margin = match verdict {
        ComparisonVerdict::SerialWins => ms,
        ComparisonVerdict::ParallelWins => mp,
        ComparisonVerdict::SingleOrTie => 0.0,
    };
    let requires_diffusion =
        verdict == ComparisonVerdict::ParallelWins && parallel.s_out_without_diffusion >= single - TIE_TOL;
    Ok(ComparisonReport {
        s_in,
        single,
        serial,
        parallel,
        verdict,
        margin,
        requires_diffusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweptParameter {
    R,
    D,
}

impl SweptParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweptParameter::R => "r",
            SweptParameter::D => "d",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub s_in: f64,
    /// `None` outside the admissible domain or where the solver failed.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub s_in: f64,
    pub at: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: SweptParameter,
    pub law: GrowthLaw,
    pub grid: Vec<f64>,
    pub series: Vec<SweepSeries>,
    pub failures: Vec<SweepFailure>,
}

fn sweep<F>(parameter: SweptParameter, law: &GrowthLaw, s_in_list: &[f64], grid: &[f64], point: F) -> Result<SweepResult>
where
    F: Fn(f64, f64) -> Result<Option<f64>> + Sync,
{
    if s_in_list.is_empty() {
        return Err(Error::EmptyGrid("s_in"));
    }
    if grid.is_empty() {
        return Err(Error::EmptyGrid(parameter.name()));
    }
    let cells: Vec<(f64, f64)> = s_in_list
        .iter()
        .flat_map(|&s| grid.iter().map(move |&x| (s, x)))
        .collect();
    let results: Vec<Result<Option<f64>>> = cells.par_iter().map(|&(s, x)| point(s, x)).collect();

    let mut failures = Vec::new();
    let mut series: Vec<SweepSeries> = s_in_list
        .iter()
        .map(|&s_in| SweepSeries {
            s_in,
            values: Vec::with_capacity(grid.len()),
        })
        .collect();
    for (k, ((s_in, x), res)) in cells.into_iter().zip(results).enumerate() {
        let value = res.unwrap_or_else(|e| {
            failures.push(SweepFailure {
                s_in,
                at: x,
                message: e.to_string(),
            });
            None
        });
        series[k / grid.len()].values.push(value);
    }
    Ok(SweepResult {
        parameter,
        law: *law,
        grid: grid.to_vec(),
        series,
        failures,
    })
}

/// Serial output against the volume fraction of tank 1. Points where tank 1
/// cannot hold biomass are left empty; `r = 1` gives the single-tank limit.
pub fn sweep_serial(s_in_list: &[f64], r_grid: &[f64], law: &GrowthLaw) -> Result<SweepResult> {
    law.validate()?;
    if let Some(&r) = r_grid.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::invalid("r", r, "serial sweep grid must lie in (0, 1]"));
    }
    sweep(SweptParameter::R, law, s_in_list, r_grid, |s_in, r| {
        if r == 1.0 {
            return Ok(Some(single_equilibrium(s_in, law)?.s_out));
        }
        if !(law.eval(s_in) > 1.0 / r) {
            return Ok(None);
        }
        Ok(Some(serial_equilibrium(s_in, r, law)?.s_out))
    })
}

/// Parallel output against the diffusion rate.
pub fn sweep_parallel(s_in_list: &[f64], d_grid: &[f64], r: f64, alpha: f64, law: &GrowthLaw) -> Result<SweepResult> {
    law.validate()?;
    Parallel::new(r, alpha, 0.0)?;
    if let Some(&d) = d_grid.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(Error::invalid("d", d, "diffusion grid must be finite and nonnegative"));
    }
    sweep(SweptParameter::D, law, s_in_list, d_grid, |s_in, d| {
        Ok(Some(parallel_equilibrium(s_in, r, alpha, d, law)?.s_out))
    })
}
