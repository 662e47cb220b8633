use std::io::Write;

use anyhow::{anyhow, bail, Context, Result};
use chemostat_core::analysis::{
    compare_configurations, diffusion_curve, single_tank_level, sweep_parallel, sweep_serial, thresholds,
    ComparisonReport, CurveOptions, DStar, SweepFailure, SweptParameter, ThresholdSet,
};
use chemostat_core::equilibrium::{equilibrium, EquilibriumKind, EquilibriumReport};
use chemostat_core::model::{Configuration, GrowthLaw, NetworkState};
use chemostat_core::numfmt::sig12;
use chemostat_core::simulate::{
    integrate, mass_balance_decay, verify_global_convergence, ConvergenceReport, DecayEstimate, IntegrateOptions,
    Sampling, Trajectory,
};
use chemostat_core::stability::{certify, StabilityCertificate};
use serde::Serialize;

use crate::scenario::{CompareSpec, Problem, Scenario};

/// Bumped whenever a JSON report changes shape.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    WashoutOnly,
}

pub struct Run<'a> {
    pub scenario: Option<&'a Scenario>,
    pub format: Option<Format>,
    pub seed: u64,
    pub out: &'a mut dyn Write,
    pub log: &'a mut dyn Write,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario: Option<&'a Scenario>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    result: T,
}

fn emit_json<T: Serialize>(ctx: &mut Run, command: &'static str, seed: Option<u64>, result: T) -> Result<()> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        command,
        scenario: ctx.scenario,
        seed,
        result,
    };
    serde_json::to_writer_pretty(&mut *ctx.out, &env)?;
    writeln!(ctx.out)?;
    Ok(())
}

fn need_scenario<'a>(ctx: &Run<'a>, command: &str) -> Result<&'a Scenario> {
    ctx.scenario.ok_or_else(|| anyhow!("`{command}` needs --scenario"))
}

fn law_text(law: &GrowthLaw) -> String {
    match law {
        GrowthLaw::Linear { m } => format!("linear (m = {})", sig12(*m)),
        GrowthLaw::Monod { mu_max, k } => format!("monod (mu_max = {}, k = {})", sig12(*mu_max), sig12(*k)),
    }
}

fn law_kind(law: &GrowthLaw) -> &'static str {
    match law {
        GrowthLaw::Linear { .. } => "linear",
        GrowthLaw::Monod { .. } => "monod",
    }
}

/// Column prefixes that tell the laws of a scenario apart.
fn law_labels(laws: &[GrowthLaw]) -> Vec<String> {
    laws.iter()
        .enumerate()
        .map(|(i, law)| {
            let kind = law_kind(law);
            if laws.iter().filter(|l| law_kind(l) == kind).count() > 1 {
                format!("{kind}{}", i + 1)
            } else {
                kind.to_string()
            }
        })
        .collect()
}

fn config_text(config: &Configuration) -> String {
    match config {
        Configuration::SingleTank => "single".into(),
        Configuration::Serial { r } => format!("serial (r = {})", sig12(*r)),
        Configuration::ParallelDiffusion(p) => format!(
            "parallel (r = {}, alpha = {}, d = {})",
            sig12(p.r),
            sig12(p.alpha),
            sig12(p.d)
        ),
    }
}

fn kind_name(kind: EquilibriumKind) -> &'static str {
    match kind {
        EquilibriumKind::NonTrivial => "non_trivial",
        EquilibriumKind::Washout => "washout",
        EquilibriumKind::Tank1Washout => "tank1_washout",
        EquilibriumKind::Tank2Washout => "tank2_washout",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(sig12).unwrap_or_default()
}

// ---------------------------------------------------------------- equilibrium

#[derive(Serialize)]
struct EquilibriumEntry {
    law: GrowthLaw,
    equilibrium: EquilibriumReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    stability: Option<StabilityCertificate>,
}

pub fn equilibrium_cmd(ctx: &mut Run) -> Result<Status> {
    let problem = need_scenario(ctx, "equilibrium")?.problem()?;
    let entries = problem
        .laws
        .iter()
        .map(|law| {
            let eq = equilibrium(&problem.config, law, problem.s_in)?;
            let stability = certify(&eq, law).ok();
            Ok(EquilibriumEntry {
                law: *law,
                equilibrium: eq,
                stability,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    match ctx.format {
        Some(Format::Json) => emit_json(ctx, "equilibrium", None, &entries)?,
        Some(Format::Csv) => {
            writeln!(ctx.out, "law,config,s_in,kind,s1,x1,s2,x2,s_out,residual,verdict")?;
            for (e, label) in entries.iter().zip(law_labels(&problem.laws)) {
                let eq = &e.equilibrium;
                let verdict = e.stability.as_ref().map(|s| verdict_name(s)).unwrap_or("");
                writeln!(
                    ctx.out,
                    "{label},{},{},{},{},{},{},{},{},{},{verdict}",
                    eq.config.name(),
                    sig12(eq.s_in),
                    kind_name(eq.kind),
                    sig12(eq.s1()),
                    sig12(eq.x1()),
                    opt(eq.s2()),
                    opt(eq.x2()),
                    sig12(eq.s_out),
                    sig12(eq.residual),
                )?;
            }
        }
        None => {
            for (i, e) in entries.iter().enumerate() {
                if i > 0 {
                    writeln!(ctx.out)?;
                }
                write_equilibrium_text(ctx.out, e)?;
            }
        }
    }
    let washout_only = entries.iter().all(|e| e.equilibrium.kind == EquilibriumKind::Washout);
    Ok(if washout_only { Status::WashoutOnly } else { Status::Success })
}

fn verdict_name(s: &StabilityCertificate) -> &'static str {
    use chemostat_core::stability::Verdict::*;
    match s.verdict {
        ExponentiallyStable => "exponentially_stable",
        Unstable => "unstable",
        Marginal => "marginal",
    }
}

fn write_equilibrium_text(out: &mut dyn Write, e: &EquilibriumEntry) -> Result<()> {
    let eq = &e.equilibrium;
    writeln!(out, "law            {}", law_text(&e.law))?;
    writeln!(out, "configuration  {}", config_text(&eq.config))?;
    writeln!(out, "s_in           {}", sig12(eq.s_in))?;
    writeln!(out, "kind           {}", kind_name(eq.kind))?;
    match eq.state {
        NetworkState::Single { s, x } => writeln!(out, "state          s = {}, x = {}", sig12(s), sig12(x))?,
        NetworkState::Pair { s1, x1, s2, x2 } => writeln!(
            out,
            "state          s1 = {}, x1 = {}, s2 = {}, x2 = {}",
            sig12(s1),
            sig12(x1),
            sig12(s2),
            sig12(x2)
        )?,
    }
    writeln!(out, "s_out          {}", sig12(eq.s_out))?;
    writeln!(out, "residual       {}", sig12(eq.residual))?;
    for flag in &eq.flags {
        writeln!(out, "flag           {}", serde_json::to_string(flag)?)?;
    }
    if let Some(st) = &e.stability {
        writeln!(out, "stability      {}", verdict_name(st))?;
        let ev: Vec<String> = st
            .eigenvalues
            .iter()
            .map(|z| {
                if z.im == 0.0 {
                    sig12(z.re)
                } else {
                    format!("{}{:+}i", sig12(z.re), sig12(z.im))
                }
            })
            .collect();
        writeln!(out, "eigenvalues    {}", ev.join(", "))?;
    }
    Ok(())
}

// ----------------------------------------------------------------- thresholds

pub fn thresholds_cmd(ctx: &mut Run, r: Option<f64>, alpha: Option<f64>) -> Result<Status> {
    let (laws, r, alpha) = match (r, alpha) {
        (Some(r), Some(alpha)) => (ctx.scenario.map(|s| s.laws()).unwrap_or(vec![GrowthLaw::UNIT_LINEAR]), r, alpha),
        (None, None) => {
            let problem = need_scenario(ctx, "thresholds")?.problem()?;
            match problem.config {
                Configuration::ParallelDiffusion(p) => (problem.laws, p.r, p.alpha),
                _ => bail!("`thresholds` needs a parallel or dead_zone configuration, or --r and --alpha"),
            }
        }
        _ => bail!("give both --r and --alpha, or neither"),
    };
    let sets = laws
        .iter()
        .map(|law| thresholds(r, alpha, law).map_err(Into::into))
        .collect::<Result<Vec<ThresholdSet>>>()?;

    #[derive(Serialize)]
    struct Entry<'a> {
        law: &'a GrowthLaw,
        thresholds: &'a ThresholdSet,
    }
    match ctx.format {
        Some(Format::Json) => {
            let entries: Vec<Entry> = laws.iter().zip(&sets).map(|(law, t)| Entry { law, thresholds: t }).collect();
            emit_json(ctx, "thresholds", None, entries)?
        }
        Some(Format::Csv) => {
            writeln!(ctx.out, "law,r,alpha,sin0,sin_lower,sin_crossover,method")?;
            for (t, label) in sets.iter().zip(law_labels(&laws)) {
                writeln!(
                    ctx.out,
                    "{label},{},{},{},{},{},{}",
                    sig12(t.r),
                    sig12(t.alpha),
                    opt(t.sin0),
                    sig12(t.sin_lower),
                    sig12(t.sin_crossover),
                    method_name(t)
                )?;
            }
        }
        None => {
            for (law, t) in laws.iter().zip(&sets) {
                writeln!(ctx.out, "law            {}", law_text(law))?;
                writeln!(ctx.out, "r, alpha       {}, {}", sig12(t.r), sig12(t.alpha))?;
                match t.sin0 {
                    Some(v) => writeln!(ctx.out, "sin0           {}", sig12(v))?,
                    None => writeln!(ctx.out, "sin0           none")?,
                }
                writeln!(ctx.out, "sin_lower      {}", sig12(t.sin_lower))?;
                writeln!(ctx.out, "sin_crossover  {}", sig12(t.sin_crossover))?;
                writeln!(ctx.out, "method         {}", method_name(t))?;
            }
        }
    }
    Ok(Status::Success)
}

fn method_name(t: &ThresholdSet) -> &'static str {
    match t.method {
        chemostat_core::analysis::ThresholdMethod::ClosedForm => "closed_form",
        chemostat_core::analysis::ThresholdMethod::Numeric => "numeric",
    }
}

// ---------------------------------------------------------------------- sweep

#[derive(Serialize)]
struct Curve {
    law: GrowthLaw,
    s_in: f64,
    values: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct SeriesSummary {
    s_in: f64,
    /// Grid point with the lowest output.
    best_at: Option<f64>,
    best_s_out: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d_star: Option<DStar>,
}

#[derive(Serialize)]
struct LawSummary {
    law: GrowthLaw,
    #[serde(skip_serializing_if = "Option::is_none")]
    thresholds: Option<ThresholdSet>,
    series: Vec<SeriesSummary>,
}

#[derive(Serialize)]
struct SweepReport {
    parameter: SweptParameter,
    grid: Vec<f64>,
    curves: Vec<Curve>,
    failures: Vec<(GrowthLaw, SweepFailure)>,
    summary: Vec<LawSummary>,
}

pub fn sweep_cmd(ctx: &mut Run) -> Result<Status> {
    let scenario = need_scenario(ctx, "sweep")?;
    let problem = scenario.problem()?;
    let spec = scenario.sweep.as_ref().ok_or_else(|| anyhow!("`sweep` needs a [sweep] block"))?;
    let grid = crate::scenario::GridSpec {
        grid: spec.grid,
        min: spec.min,
        max: spec.max,
        count: spec.count,
    }
    .points("sweep")?;
    let s_list = if spec.s_in.is_empty() { vec![problem.s_in] } else { spec.s_in.clone() };

    let mut curves = Vec::new();
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for law in &problem.laws {
        let result = match (spec.parameter, problem.config) {
            (SweptParameter::R, Configuration::Serial { .. }) => sweep_serial(&s_list, &grid, law),
            (SweptParameter::D, Configuration::ParallelDiffusion(p)) => sweep_parallel(&s_list, &grid, p.r, p.alpha, law),
            (SweptParameter::R, _) => bail!("`sweep.parameter = \"r\"` needs a serial configuration"),
            (SweptParameter::D, _) => bail!("`sweep.parameter = \"d\"` needs a parallel or dead_zone configuration"),
        }
        .context("sweep")?;
        failures.extend(result.failures.iter().cloned().map(|f| (*law, f)));
        summary.push(summarize(&problem, law, &result.grid, &result.series)?);
        curves.extend(result.series.into_iter().map(|s| Curve {
            law: *law,
            s_in: s.s_in,
            values: s.values,
        }));
    }

    let washout_only = curves.iter().all(|c| {
        c.values
            .iter()
            .all(|v| v.is_none_or(|v| v >= c.s_in * (1.0 - 1e-12)))
    });
    let report = SweepReport {
        parameter: spec.parameter,
        grid,
        curves,
        failures,
        summary,
    };
    match ctx.format {
        Some(Format::Json) => emit_json(ctx, "sweep", None, &report)?,
        Some(Format::Csv) | None => {
            write_sweep_csv(ctx.out, &report, &problem.laws)?;
            write_sweep_summary(ctx.log, &report)?;
        }
    }
    Ok(if washout_only { Status::WashoutOnly } else { Status::Success })
}

fn summarize(problem: &Problem, law: &GrowthLaw, grid: &[f64], series: &[chemostat_core::analysis::SweepSeries]) -> Result<LawSummary> {
    let parallel = match problem.config {
        Configuration::ParallelDiffusion(p) => Some(p),
        _ => None,
    };
    let thresholds = parallel.and_then(|p| thresholds(p.r, p.alpha, law).ok());
    let series = series
        .iter()
        .map(|s| {
            let best = s
                .values
                .iter()
                .zip(grid)
                .filter_map(|(v, x)| v.map(|v| (*x, v)))
                .fold(None::<(f64, f64)>, |b, c| match b {
                    Some(b) if b.1 <= c.1 => Some(b),
                    _ => Some(c),
                });
            let d_star = parallel.and_then(|p| {
                let level = single_tank_level(law).ok()?;
                if s.s_in <= level {
                    return None;
                }
                diffusion_curve(s.s_in, p.r, p.alpha, law, &CurveOptions::default()).ok().map(|c| c.d_star)
            });
            SeriesSummary {
                s_in: s.s_in,
                best_at: best.map(|b| b.0),
                best_s_out: best.map(|b| b.1),
                d_star,
            }
        })
        .collect();
    Ok(LawSummary {
        law: *law,
        thresholds,
        series,
    })
}

fn write_sweep_csv(out: &mut dyn Write, report: &SweepReport, laws: &[GrowthLaw]) -> Result<()> {
    let labels = law_labels(laws);
    let label_of = |law: &GrowthLaw| laws.iter().position(|l| l == law).map(|i| labels[i].clone()).unwrap_or_default();
    let mut header = vec![report.parameter.name().to_string()];
    for c in &report.curves {
        if laws.len() > 1 {
            header.push(format!("{}:s_in={}", label_of(&c.law), sig12(c.s_in)));
        } else {
            header.push(format!("s_in={}", sig12(c.s_in)));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    for (i, x) in report.grid.iter().enumerate() {
        let mut row = vec![sig12(*x)];
        row.extend(report.curves.iter().map(|c| opt(c.values[i])));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

fn write_sweep_summary(log: &mut dyn Write, report: &SweepReport) -> Result<()> {
    for s in &report.summary {
        writeln!(log, "{}", law_text(&s.law))?;
        if let Some(t) = &s.thresholds {
            writeln!(
                log,
                "  thresholds: sin0 = {}, sin_lower = {}, crossover = {}",
                opt(t.sin0),
                sig12(t.sin_lower),
                sig12(t.sin_crossover)
            )?;
        }
        for series in &s.series {
            let mut line = format!(
                "  s_in = {}: lowest output {} at {} = {}",
                sig12(series.s_in),
                opt(series.best_s_out),
                report.parameter.name(),
                opt(series.best_at)
            );
            match series.d_star {
                Some(DStar::Finite { d, s_out, .. }) => line += &format!(", d* = {} (s_out = {})", sig12(d), sig12(s_out)),
                Some(DStar::Infinite { infimum }) => line += &format!(", d* = inf (limit {})", sig12(infimum)),
                None => {}
            }
            writeln!(log, "{line}")?;
        }
    }
    for (law, f) in &report.failures {
        writeln!(log, "failed point ({}): s_in = {}, at {}: {}", law_kind(law), sig12(f.s_in), sig12(f.at), f.message)?;
    }
    Ok(())
}

// ------------------------------------------------------------------- simulate

#[derive(Serialize)]
struct TrajectoryReport<'a> {
    law: GrowthLaw,
    target: &'a EquilibriumReport,
    trajectory: &'a Trajectory,
    decay: DecayEstimate,
}

pub fn simulate_cmd(ctx: &mut Run) -> Result<Status> {
    let scenario = need_scenario(ctx, "simulate")?;
    let problem = scenario.problem()?;
    let spec = scenario
        .simulate
        .as_ref()
        .ok_or_else(|| anyhow!("`simulate` needs a [simulate] block"))?;
    let law = problem.laws[0];
    if problem.laws.len() > 1 {
        writeln!(ctx.log, "note: simulating the first growth law only")?;
    }
    let target = equilibrium(&problem.config, &law, problem.s_in)?;
    let status = if target.kind == EquilibriumKind::Washout {
        Status::WashoutOnly
    } else {
        Status::Success
    };

    match (&spec.initial, spec.trials) {
        (Some(_), Some(_)) => bail!("`simulate.initial` and `simulate.trials` are exclusive"),
        (None, None) => bail!("`simulate` needs `initial` or `trials`"),
        (None, Some(n)) => {
            let report = verify_global_convergence(&problem.config, &law, problem.s_in, n, ctx.seed)?;
            match ctx.format {
                Some(Format::Json) => emit_json(ctx, "simulate", Some(ctx.seed), &report)?,
                Some(Format::Csv) | None => {
                    write_trials_csv(ctx.out, &report)?;
                }
            }
            write_convergence_summary(ctx.log, &report)?;
        }
        (Some(initial), None) => {
            let init = NetworkState::from_slice(initial).context("`simulate.initial`")?;
            let defaults = IntegrateOptions::default();
            let opts = IntegrateOptions {
                rel_tol: spec.rel_tol.unwrap_or(defaults.rel_tol),
                abs_tol: spec.abs_tol.unwrap_or(defaults.abs_tol),
                sampling: Sampling::Uniform { n: spec.samples },
                ..defaults
            };
            let traj = integrate(&problem.config, &law, &init, problem.s_in, spec.t_end, &opts)?;
            let decay = mass_balance_decay(&traj, &problem.config);
            match ctx.format {
                Some(Format::Json) => {
                    let report = TrajectoryReport {
                        law,
                        target: &target,
                        trajectory: &traj,
                        decay,
                    };
                    emit_json(ctx, "simulate", None, &report)?
                }
                Some(Format::Csv) | None => traj.write_csv(&mut *ctx.out)?,
            }
            let dist = traj.final_state.max_abs_diff(&target.state);
            writeln!(
                ctx.log,
                "t_final = {}, settled = {}, distance to steady state = {}",
                sig12(traj.t_final),
                traj.settled,
                sig12(dist)
            )?;
        }
    }
    Ok(status)
}

fn write_trials_csv(out: &mut dyn Write, report: &ConvergenceReport) -> Result<()> {
    let mut failed = report.failures.iter().map(|f| f.trial).collect::<Vec<_>>();
    failed.sort_unstable();
    writeln!(out, "trial,converged")?;
    for trial in 0..report.n_trials {
        writeln!(out, "{trial},{}", failed.binary_search(&trial).is_err())?;
    }
    Ok(())
}

fn write_convergence_summary(log: &mut dyn Write, report: &ConvergenceReport) -> Result<()> {
    writeln!(log, "{}", report.summary())?;
    writeln!(
        log,
        "max deviation {}, worst settle time {}",
        sig12(report.max_deviation),
        opt(report.worst_settle_time)
    )?;
    writeln!(
        log,
        "decay rate: fitted {} (median), predicted {}, worst trial error {}",
        opt(report.fitted_rate),
        sig12(report.predicted_rate),
        opt(report.worst_trial_rate_error)
    )?;
    if !report.covered_by_theory {
        writeln!(log, "note: outside the linear-law convergence theorems; observation only")?;
    }
    Ok(())
}

// -------------------------------------------------------------------- compare

pub fn compare_cmd(ctx: &mut Run, s_in: Option<f64>) -> Result<Status> {
    let (law, s_in, spec) = match ctx.scenario {
        Some(sc) => {
            let law = sc.laws()[0];
            let s_in = match s_in {
                Some(v) => v,
                None => sc.problem()?.s_in,
            };
            (law, s_in, sc.compare.unwrap_or_default())
        }
        None => (
            GrowthLaw::UNIT_LINEAR,
            s_in.ok_or_else(|| anyhow!("`compare` needs --s-in or --scenario"))?,
            CompareSpec::default(),
        ),
    };
    let level = single_tank_level(&law)?;
    if !(s_in > level) {
        bail!("`compare` needs s_in above the single-tank level {}, got {}", sig12(level), sig12(s_in));
    }
    let report = compare_configurations(
        s_in,
        &law,
        &spec.r.points("compare.r")?,
        &spec.alpha.points("compare.alpha")?,
        &spec.d.points("compare.d")?,
    )?;
    match ctx.format {
        Some(Format::Json) => emit_json(ctx, "compare", None, report)?,
        Some(Format::Csv) => {
            writeln!(
                ctx.out,
                "s_in,single,serial_r,serial_s_out,parallel_r,parallel_alpha,parallel_d,parallel_s_out,verdict,margin,requires_diffusion"
            )?;
            writeln!(
                ctx.out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                sig12(report.s_in),
                sig12(report.single),
                sig12(report.serial.r),
                sig12(report.serial.s_out),
                sig12(report.parallel.r),
                sig12(report.parallel.alpha),
                sig12(report.parallel.d),
                sig12(report.parallel.s_out),
                verdict_text(&report),
                sig12(report.margin),
                report.requires_diffusion
            )?;
        }
        None => {
            writeln!(ctx.out, "s_in           {}", sig12(report.s_in))?;
            writeln!(ctx.out, "single tank    {}", sig12(report.single))?;
            writeln!(
                ctx.out,
                "best serial    {} at r = {}",
                sig12(report.serial.s_out),
                sig12(report.serial.r)
            )?;
            writeln!(
                ctx.out,
                "best parallel  {} at r = {}, alpha = {}, d = {}",
                sig12(report.parallel.s_out),
                sig12(report.parallel.r),
                sig12(report.parallel.alpha),
                sig12(report.parallel.d)
            )?;
            writeln!(ctx.out, "verdict        {}", verdict_text(&report))?;
            writeln!(ctx.out, "margin         {}", sig12(report.margin))?;
            if report.requires_diffusion {
                writeln!(ctx.out, "note           requires diffusion")?;
            }
        }
    }
    Ok(Status::Success)
}

fn verdict_text(r: &ComparisonReport) -> &'static str {
    use chemostat_core::analysis::ComparisonVerdict::*;
    match r.verdict {
        SerialWins => "serial_wins",
        ParallelWins => "parallel_wins",
        SingleOrTie => "single_or_tie",
    }
}
