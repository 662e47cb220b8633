//! Adaptive Dormand-Prince 5(4) integrator with dense output.
//!
//! Steps whose result leaves the nonnegative orthant are rejected and
//! retried with half the step, so trajectories of the chemostat models stay
//! nonnegative without clamping.

use crate::error::{Error, Result};
use crate::model::Chemostat;

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

impl OdeSystem for Chemostat {
    fn dim(&self) -> usize {
        Chemostat::dim(self)
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        Chemostat::rhs(self, y, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5Options {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_max: f64,
    /// Smallest admissible step; below it the integration fails.
    pub h_min: f64,
    /// Reject steps producing negative components.
    pub positivity: bool,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Dopri5Options {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            h_max: f64::INFINITY,
            h_min: 1e-14,
            positivity: true,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeOutput {
    /// States at the requested sample times that were reached.
    pub samples: Vec<(f64, Vec<f64>)>,
    pub t_final: f64,
    pub y_final: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
}

// Butcher tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// error estimate: difference between the 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// continuous extension
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

pub struct Dopri5 {
    pub options: Dopri5Options,
}

struct Dense {
    t0: f64,
    h: f64,
    r: [Vec<f64>; 5],
}

impl Dense {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.r[0][i]
                + theta * (self.r[1][i] + theta1 * (self.r[2][i] + theta * (self.r[3][i] + theta1 * self.r[4][i])));
        }
    }
}

impl Dopri5 {
    pub fn new(options: Dopri5Options) -> Self {
        Dopri5 { options }
    }

    /// Integrates from `(t0, y0)` to `t_end`.
    ///
    /// `sample_times` must be nondecreasing; states there come from the
    /// continuous extension. `observer` sees every accepted step and may
    /// return `false` to stop early.
    pub fn solve<S, F>(
        &self,
        system: &S,
        t0: f64,
        y0: &[f64],
        t_end: f64,
        sample_times: &[f64],
        mut observer: F,
    ) -> Result<OdeOutput>
    where
        S: OdeSystem + ?Sized,
        F: FnMut(f64, &[f64]) -> bool,
    {
        let opt = &self.options;
        let n = system.dim();
        assert_eq!(y0.len(), n, "initial state has wrong dimension");
        let mut samples = Vec::with_capacity(sample_times.len());
        let mut next_sample = 0;
        while next_sample < sample_times.len() && sample_times[next_sample] <= t0 {
            samples.push((sample_times[next_sample], y0.to_vec()));
            next_sample += 1;
        }

        let mut t = t0;
        let mut y = y0.to_vec();
        let mut k1 = vec![0.0; n];
        system.rhs(t, &y, &mut k1);
        let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut stage = vec![0.0; n];
        let mut y1 = vec![0.0; n];
        let mut h = self.initial_step(system, t, &y, &k1, t_end - t0).min(opt.h_max);
        let (mut accepted, mut rejected) = (0usize, 0usize);
        let mut last_rejected = false;

        while t < t_end {
            if accepted + rejected >= opt.max_steps {
                return Err(Error::StepSizeUnderflow { t, h, last_state: y });
            }
            // stretch the step slightly rather than leave a sliver behind
            let last = t + 1.01 * h >= t_end;
            if last {
                h = t_end - t;
            }
            if h < opt.h_min && !last {
                return Err(Error::StepSizeUnderflow { t, h, last_state: y });
            }

            for i in 0..n {
                stage[i] = y[i] + h * A21 * k1[i];
            }
            system.rhs(t + C2 * h, &stage, &mut k2);
            for i in 0..n {
                stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            system.rhs(t + C3 * h, &stage, &mut k3);
            for i in 0..n {
                stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            system.rhs(t + C4 * h, &stage, &mut k4);
            for i in 0..n {
                stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            system.rhs(t + C5 * h, &stage, &mut k5);
            for i in 0..n {
                stage[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            system.rhs(t + h, &stage, &mut k6);
            for i in 0..n {
                y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }

            if opt.positivity && y1.iter().any(|v| *v < 0.0) {
                rejected += 1;
                last_rejected = true;
                h *= 0.5;
                continue;
            }

            system.rhs(t + h, &y1, &mut k7);
            let mut err = 0.0;
            for i in 0..n {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = opt.abs_tol + opt.rel_tol * y[i].abs().max(y1[i].abs());
                err += (e / sc) * (e / sc);
            }
            let err = (err / n as f64).sqrt();

            if err > 1.0 || !err.is_finite() {
                rejected += 1;
                last_rejected = true;
                let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.2) } else { 0.2 };
                h *= fac;
                continue;
            }

            if next_sample < sample_times.len() && sample_times[next_sample] <= t + h {
                let dense = self.dense(t, h, &y, &y1, &k1, &k3, &k4, &k5, &k6, &k7);
                while next_sample < sample_times.len() && sample_times[next_sample] <= t + h {
                    let ts = sample_times[next_sample];
                    let mut ys = vec![0.0; n];
                    dense.eval(ts, &mut ys);
                    samples.push((ts, ys));
                    next_sample += 1;
                }
            }

            t = if last { t_end } else { t + h };
            std::mem::swap(&mut y, &mut y1);
            std::mem::swap(&mut k1, &mut k7);
            accepted += 1;
            if !observer(t, &y) {
                break;
            }

            let mut fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            last_rejected = false;
            h = (h * fac).min(opt.h_max);
        }

        Ok(OdeOutput {
            samples,
            t_final: t,
            y_final: y,
            accepted,
            rejected,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn dense(
        &self,
        t0: f64,
        h: f64,
        y0: &[f64],
        y1: &[f64],
        k1: &[f64],
        k3: &[f64],
        k4: &[f64],
        k5: &[f64],
        k6: &[f64],
        k7: &[f64],
    ) -> Dense {
        let n = y0.len();
        let mut r: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
        for i in 0..n {
            let diff = y1[i] - y0[i];
            let bspl = h * k1[i] - diff;
            r[0][i] = y0[i];
            r[1][i] = diff;
            r[2][i] = bspl;
            r[3][i] = diff - h * k7[i] - bspl;
            r[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        Dense { t0, h, r }
    }

    fn initial_step<S: OdeSystem + ?Sized>(&self, system: &S, t: f64, y: &[f64], f0: &[f64], span: f64) -> f64 {
        let opt = &self.options;
        let n = y.len();
        let sc: Vec<f64> = y.iter().map(|v| opt.abs_tol + opt.rel_tol * v.abs()).collect();
        let norm = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt();
        let (d0, d1) = (norm(y), norm(f0));
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span.abs());
        let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
        let mut f1 = vec![0.0; n];
        system.rhs(t + h0, &y1, &mut f1);
        let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
        let d2 = norm(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span.abs()).max(opt.h_min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay(f64);

    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -self.0 * y[0];
        }
    }

    struct Oscillator;

    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    #[test]
    fn exponential_decay_endpoint() {
        let solver = Dopri5::new(Dopri5Options {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            ..Default::default()
        });
        let out = solver.solve(&Decay(1.5), 0.0, &[2.0], 3.0, &[], |_, _| true).unwrap();
        assert_eq!(out.t_final, 3.0);
        assert!((out.y_final[0] - 2.0 * (-4.5f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn dense_output_is_accurate() {
        let solver = Dopri5::new(Dopri5Options {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            positivity: false,
            ..Default::default()
        });
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let out = solver.solve(&Oscillator, 0.0, &[1.0, 0.0], 10.0, &times, |_, _| true).unwrap();
        assert_eq!(out.samples.len(), times.len());
        for (t, y) in &out.samples {
            assert!((y[0] - t.cos()).abs() < 1e-7, "t = {t}");
            assert!((y[1] + t.sin()).abs() < 1e-7, "t = {t}");
        }
    }

    #[test]
    fn observer_can_stop() {
        let solver = Dopri5::new(Dopri5Options::default());
        let out = solver.solve(&Decay(1.0), 0.0, &[1.0], 100.0, &[], |t, _| t < 1.0).unwrap();
        assert!(out.t_final >= 1.0 && out.t_final < 100.0);
    }

    #[test]
    fn tiny_minimum_step_underflows() {
        let solver = Dopri5::new(Dopri5Options {
            h_min: 1.0,
            h_max: 0.5,
            ..Default::default()
        });
        let err = solver.solve(&Decay(1.0), 0.0, &[1.0], 10.0, &[], |_, _| true).unwrap_err();
        assert!(matches!(err, Error::StepSizeUnderflow { .. }));
    }
}
