//! Trajectories of the configuration ODEs, randomized convergence trials
//! and the decay of the mass-balance deviation `z = s_in - x - s`.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{equilibrium, EquilibriumKind};
use crate::error::{Error, Result};
use crate::model::{mass_deviation, Chemostat, Configuration, GrowthLaw, NetworkState};
use crate::numfmt::sig12;
use crate::ode::{Dopri5, Dopri5Options};
use crate::stability::mass_balance_matrix;

/// Field max-norm below which a trajectory counts as at rest.
pub const SETTLE_TOL: f64 = 1e-9;
/// How long the field must stay below `SETTLE_TOL`.
pub const SETTLE_WINDOW: f64 = 1.0;
/// Max-norm distance to the target for a converged trial.
pub const CONVERGENCE_TOL: f64 = 1e-6;
/// Relative agreement required between fitted and predicted decay rates.
pub const DECAY_RATE_TOL: f64 = 0.10;
/// Time limit of a convergence trial.
pub const TRIAL_HORIZON: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    /// Every accepted integrator step.
    Steps,
    /// `n` equally spaced times on `[0, t_end]`.
    Uniform { n: usize },
    Times { times: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrateOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub sampling: Sampling,
    pub stop_when_settled: bool,
    pub h_max: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            sampling: Sampling::Uniform { n: 201 },
            stop_when_settled: false,
            h_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub config: Configuration,
    pub s_in: f64,
    pub times: Vec<f64>,
    pub states: Vec<NetworkState>,
    pub z_series: Vec<Vec<f64>>,
    pub settled: bool,
    pub settle_time: Option<f64>,
    pub t_final: f64,
    pub final_state: NetworkState,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

pub const TRAJECTORY_HEADER: [&str; 7] = ["t", "s1", "x1", "s2", "x2", "z1", "z2"];

impl Trajectory {
    /// CSV with columns `t,s1,x1,s2,x2,z1,z2`; the second tank's columns
    /// are empty for a single tank.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", TRAJECTORY_HEADER.join(","))?;
        for ((t, state), z) in self.times.iter().zip(&self.states).zip(&self.z_series) {
            let (s, x) = (state.substrates(), state.biomasses());
            let cell = |v: &[f64], i: usize| v.get(i).map(|x| sig12(*x)).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                sig12(*t),
                cell(&s, 0),
                cell(&x, 0),
                cell(&s, 1),
                cell(&x, 1),
                cell(z, 0),
                cell(z, 1)
            )?;
        }
        Ok(())
    }
}

fn check_tolerance(name: &'static str, v: f64) -> Result<()> {
    if (1e-12..=1e-3).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(name, v, "must lie in [1e-12, 1e-3]"))
    }
}

pub fn integrate(
    config: &Configuration,
    law: &GrowthLaw,
    initial: &NetworkState,
    s_in: f64,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    check_tolerance("rel_tol", opts.rel_tol)?;
    check_tolerance("abs_tol", opts.abs_tol)?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::invalid("t_end", t_end, "must be positive and finite"));
    }
    if initial.dim() != config.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.dim(),
            found: initial.dim(),
        });
    }
    let y0 = initial.to_vec();
    if let Some(v) = y0.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::NegativeConcentration(*v));
    }
    let system = Chemostat::new(*config, *law, s_in)?;

    let sample_times = match &opts.sampling {
        Sampling::Steps => Vec::new(),
        Sampling::Uniform { n } => {
            let n = (*n).max(2);
            (0..n)
                .map(|i| if i == n - 1 { t_end } else { t_end * i as f64 / (n - 1) as f64 })
                .collect()
        }
        Sampling::Times { times } => {
            if times.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::invalid("times", f64::NAN, "sample times must be nondecreasing"));
            }
            times.clone()
        }
    };
    let keep_steps = opts.sampling == Sampling::Steps;

    let solver = Dopri5::new(Dopri5Options {
        rel_tol: opts.rel_tol,
        abs_tol: opts.abs_tol,
        h_max: opts.h_max,
        ..Default::default()
    });

    let mut steps: Vec<(f64, Vec<f64>)> = Vec::new();
    if keep_steps {
        steps.push((0.0, y0.clone()));
    }
    let mut quiet_since = (system.residual(&y0) < SETTLE_TOL).then_some(0.0);
    let mut settle_time = None;
    let out = solver.solve(&system, 0.0, &y0, t_end, &sample_times, |t, y| {
        if keep_steps {
            steps.push((t, y.to_vec()));
        }
        if system.residual(y) < SETTLE_TOL {
            let since = *quiet_since.get_or_insert(t);
            if settle_time.is_none() && t - since >= SETTLE_WINDOW {
                settle_time = Some(since);
            }
        } else {
            quiet_since = None;
            settle_time = None;
        }
        !(opts.stop_when_settled && settle_time.is_some())
    })?;

    let points = if keep_steps { steps } else { out.samples };
    let mut times = Vec::with_capacity(points.len());
    let mut states = Vec::with_capacity(points.len());
    let mut z_series = Vec::with_capacity(points.len());
    for (t, y) in points {
        z_series.push(mass_deviation(&y, s_in));
        states.push(NetworkState::from_slice(&y)?);
        times.push(t);
    }
    Ok(Trajectory {
        config: *config,
        s_in,
        times,
        states,
        z_series,
        settled: settle_time.is_some(),
        settle_time,
        t_final: out.t_final,
        final_state: NetworkState::from_slice(&out.y_final)?,
        accepted_steps: out.accepted,
        rejected_steps: out.rejected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DecayEstimate {
    Fitted {
        /// Least-squares slope of `-ln |z|` against time.
        rate: f64,
        /// Minus the dominant eigenvalue of the mass-balance matrix.
        expected: f64,
        relative_error: f64,
        window: (f64, f64),
        points: usize,
    },
    Inconclusive {
        reason: String,
    },
}

impl DecayEstimate {
    pub fn relative_error(&self) -> Option<f64> {
        match self {
            DecayEstimate::Fitted { relative_error, .. } => Some(*relative_error),
            DecayEstimate::Inconclusive { .. } => None,
        }
    }
}

/// Fits the exponential decay of `|z(t)|` once it has fallen three orders
/// of magnitude below its peak, down to ten orders.
pub fn mass_balance_decay(traj: &Trajectory, config: &Configuration) -> DecayEstimate {
    let expected = -mass_balance_matrix(config).dominant();
    let norms: Vec<f64> = traj
        .z_series
        .iter()
        .map(|z| z.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let inconclusive = |reason: &str| DecayEstimate::Inconclusive { reason: reason.into() };
    let Some((peak_at, peak)) = norms
        .iter()
        .copied()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
    else {
        return inconclusive("empty trajectory");
    };
    if peak == 0.0 {
        return inconclusive("z is identically zero");
    }
    let (upper, lower) = (1e-3 * peak, (1e-10 * peak).max(1e-13));
    let Some(start) = (peak_at..norms.len()).find(|&i| norms[i] <= upper) else {
        return inconclusive("|z| dropped less than three orders of magnitude");
    };
    let window: Vec<(f64, f64)> = (start..norms.len())
        .take_while(|&i| norms[i] >= lower)
        .filter(|&i| norms[i] > 0.0)
        .map(|i| (traj.times[i], norms[i].ln()))
        .collect();
    if window.len() < 3 || window.last().unwrap().0 <= window[0].0 {
        return inconclusive("too few samples in the fit window");
    }
    let n = window.len() as f64;
    let (mt, my) = window.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let (sty, stt) = window
        .iter()
        .fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (y - my), b + (t - mt) * (t - mt)));
    let rate = -sty / stt;
    DecayEstimate::Fitted {
        rate,
        expected,
        relative_error: (rate - expected).abs() / expected,
        window: (window[0].0, window.last().unwrap().0),
        points: window.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    /// Generator stream of the trial; with the report seed it reproduces the
    /// initial condition.
    pub stream: u64,
    pub initial: NetworkState,
    pub final_state: Option<NetworkState>,
    pub deviation: f64,
    pub settle_time: Option<f64>,
    pub converged: bool,
    pub decay: DecayEstimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config: Configuration,
    pub law: GrowthLaw,
    pub s_in: f64,
    pub seed: u64,
    /// ChaCha8 seeded with `seed`, one stream per trial index.
    pub generator: String,
    pub target: NetworkState,
    pub target_kind: EquilibriumKind,
    pub n_trials: usize,
    pub n_converged: usize,
    pub worst_settle_time: Option<f64>,
    pub max_deviation: f64,
    /// Minus the dominant eigenvalue of the mass-balance matrix.
    pub predicted_rate: f64,
    /// Median over trials of the per-trial fitted decay rates.
    pub fitted_rate: Option<f64>,
    /// `|fitted_rate - predicted_rate| / predicted_rate`.
    pub rate_error: Option<f64>,
    /// Largest per-trial relative error. With a repeated eigenvalue `|z|`
    /// carries a factor linear in `t`, which biases short fits.
    pub worst_trial_rate_error: Option<f64>,
    pub inconclusive_fits: usize,
    /// The linear-law convergence theorem covers this case; otherwise the
    /// outcome is an observation only.
    pub covered_by_theory: bool,
    pub failures: Vec<TrialOutcome>,
}

impl ConvergenceReport {
    pub fn all_converged(&self) -> bool {
        self.n_converged == self.n_trials
    }

    pub fn rates_agree(&self) -> bool {
        matches!(self.rate_error, Some(e) if e <= DECAY_RATE_TOL)
    }

    pub fn summary(&self) -> String {
        format!("{}/{} converged", self.n_converged, self.n_trials)
    }
}

/// Initial condition of one trial: `s_i` uniform on `[0, 2 s_in]`, `x_i`
/// uniform on `[1e-3, 2 s_in]`.
pub fn trial_initial(config: &Configuration, s_in: f64, seed: u64, trial: usize) -> NetworkState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let top = 2.0 * s_in;
    let values: Vec<f64> = (0..config.dim())
        .map(|i| {
            if i % 2 == 0 {
                rng.gen_range(0.0..=top)
            } else {
                rng.gen_range(1e-3..=top.max(2e-3))
            }
        })
        .collect();
    NetworkState::from_slice(&values).expect("dimension is 2 or 4")
}

fn covered_by_theory(config: &Configuration, law: &GrowthLaw, s_in: f64) -> bool {
    law.is_unit_linear()
        && match config {
            Configuration::SingleTank => s_in > 1.0,
            Configuration::Serial { r } => s_in > 1.0 / r,
            Configuration::ParallelDiffusion(p) => p.d > 0.0 && s_in > 1.0,
        }
}

/// Integrates `n_trials` random positive-biomass initial conditions and
/// checks that each one settles at the computed steady state.
pub fn verify_global_convergence(
    config: &Configuration,
    law: &GrowthLaw,
    s_in: f64,
    n_trials: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    if n_trials == 0 {
        return Err(Error::invalid("n_trials", 0.0, "at least one trial is needed"));
    }
    let target = equilibrium(config, law, s_in)?;
    // Near a steady state the step size is capped by stability and the
    // stiff component sits at the tolerance level, so the tolerance must be
    // well below the settling threshold.
    let opts = IntegrateOptions {
        rel_tol: 1e-12,
        abs_tol: 1e-12,
        sampling: Sampling::Steps,
        stop_when_settled: true,
        ..Default::default()
    };

    let outcomes: Vec<TrialOutcome> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let initial = trial_initial(config, s_in, seed, trial);
            match integrate(config, law, &initial, s_in, TRIAL_HORIZON, &opts) {
                Ok(traj) => {
                    let deviation = traj.final_state.max_abs_diff(&target.state);
                    TrialOutcome {
                        trial,
                        stream: trial as u64,
                        initial,
                        final_state: Some(traj.final_state),
                        deviation,
                        settle_time: traj.settle_time,
                        converged: traj.settled && deviation <= CONVERGENCE_TOL,
                        decay: mass_balance_decay(&traj, config),
                        error: None,
                    }
                }
                Err(e) => TrialOutcome {
                    trial,
                    stream: trial as u64,
                    initial,
                    final_state: None,
                    deviation: f64::INFINITY,
                    settle_time: None,
                    converged: false,
                    decay: DecayEstimate::Inconclusive {
                        reason: "integration failed".into(),
                    },
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let n_converged = outcomes.iter().filter(|o| o.converged).count();
    let worst_settle_time = outcomes
        .iter()
        .filter_map(|o| o.settle_time)
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));
    let max_deviation = outcomes.iter().map(|o| o.deviation).fold(0.0, f64::max);
    let mut rates: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| match o.decay {
            DecayEstimate::Fitted { rate, .. } => Some(rate),
            _ => None,
        })
        .collect();
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let fitted_rate = (!rates.is_empty()).then(|| {
        let m = rates.len() / 2;
        if rates.len().is_multiple_of(2) {
            0.5 * (rates[m - 1] + rates[m])
        } else {
            rates[m]
        }
    });
    let predicted_rate = -mass_balance_matrix(config).dominant();
    let worst_trial_rate_error = outcomes
        .iter()
        .filter_map(|o| o.decay.relative_error())
        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
    let inconclusive_fits = outcomes.len() - rates.len();

    Ok(ConvergenceReport {
        config: *config,
        law: *law,
        s_in,
        seed,
        generator: "chacha8".into(),
        target: target.state,
        target_kind: target.kind,
        n_trials,
        n_converged,
        worst_settle_time,
        max_deviation,
        predicted_rate,
        fitted_rate,
        rate_error: fitted_rate.map(|f| (f - predicted_rate).abs() / predicted_rate),
        worst_trial_rate_error,
        inconclusive_fits,
        covered_by_theory: covered_by_theory(config, law, s_in),
        failures: outcomes.into_iter().filter(|o| !o.converged).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LIN: GrowthLaw = GrowthLaw::UNIT_LINEAR;

    #[test]
    fn serial_run_settles_at_known_state() {
        let cfg = Configuration::serial(0.5).unwrap();
        let opts = IntegrateOptions {
            abs_tol: 1e-10,
            stop_when_settled: true,
            ..Default::default()
        };
        let init = NetworkState::pair(4.0, 0.1, 4.0, 0.1);
        let traj = integrate(&cfg, &LIN, &init, 4.0, 500.0, &opts).unwrap();
        let root5 = 5f64.sqrt();
        let expected = NetworkState::pair(2.0, 2.0, 3.0 - root5, 1.0 + root5);
        assert!(traj.settled);
        assert!(traj.final_state.max_abs_diff(&expected) < 1e-8);
    }

    #[test]
    fn washout_is_invariant() {
        let cfg = Configuration::parallel(0.9, 0.6, 1.0).unwrap();
        let init = NetworkState::pair(3.0, 0.0, 3.0, 0.0);
        let traj = integrate(&cfg, &LIN, &init, 3.0, 50.0, &IntegrateOptions::default()).unwrap();
        assert!(traj.states.iter().all(|s| *s == init));
        assert_eq!(traj.settle_time, Some(0.0));
    }

    #[test]
    fn bad_inputs_rejected() {
        let cfg = Configuration::SingleTank;
        let init = NetworkState::single(1.0, 1.0);
        let loose = IntegrateOptions {
            rel_tol: 1e-2,
            ..Default::default()
        };
        assert!(integrate(&cfg, &LIN, &init, 2.0, 1.0, &loose).is_err());
        let neg = NetworkState::single(-1.0, 1.0);
        assert!(matches!(
            integrate(&cfg, &LIN, &neg, 2.0, 1.0, &IntegrateOptions::default()),
            Err(Error::NegativeConcentration(_))
        ));
        let wrong = NetworkState::pair(1.0, 1.0, 1.0, 1.0);
        assert!(matches!(
            integrate(&cfg, &LIN, &wrong, 2.0, 1.0, &IntegrateOptions::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_deviation_is_inconclusive() {
        let cfg = Configuration::serial(0.5).unwrap();
        let init = NetworkState::pair(4.0, 0.0, 4.0, 0.0);
        let traj = integrate(&cfg, &LIN, &init, 4.0, 5.0, &IntegrateOptions::default()).unwrap();
        assert!(matches!(mass_balance_decay(&traj, &cfg), DecayEstimate::Inconclusive { .. }));
    }

    #[test]
    fn serial_decay_rate() {
        let cfg = Configuration::serial(0.5).unwrap();
        let opts = IntegrateOptions {
            sampling: Sampling::Steps,
            ..Default::default()
        };
        let init = NetworkState::pair(0.5, 1.0, 0.2, 0.3);
        let traj = integrate(&cfg, &LIN, &init, 4.0, 30.0, &opts).unwrap();
        match mass_balance_decay(&traj, &cfg) {
            DecayEstimate::Fitted { rate, relative_error, .. } => {
                assert!(relative_error < DECAY_RATE_TOL, "rate {rate}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trials_are_reproducible() {
        let cfg = Configuration::SingleTank;
        let a = trial_initial(&cfg, 3.0, 7, 4);
        assert_eq!(a, trial_initial(&cfg, 3.0, 7, 4));
        assert_ne!(a, trial_initial(&cfg, 3.0, 7, 5));
        assert_ne!(a, trial_initial(&cfg, 3.0, 8, 4));
    }

    #[test]
    fn csv_layout() {
        let cfg = Configuration::SingleTank;
        let init = NetworkState::single(1.0, 2.0);
        let opts = IntegrateOptions {
            sampling: Sampling::Uniform { n: 3 },
            ..Default::default()
        };
        let traj = integrate(&cfg, &LIN, &init, 3.0, 2.0, &opts).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,s1,x1,s2,x2,z1,z2");
        assert_eq!(lines[1], "0,1,2,,,0,");
        assert_eq!(lines.len(), 4);
    }
}
