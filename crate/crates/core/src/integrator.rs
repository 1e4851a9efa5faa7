//! Adaptive Dormand–Prince 5(4) integration with dense output, plus a fixed-step
//! classical Runge–Kutta fallback.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub initial_step: Option<f64>,
}

impl IntegratorConfig {
    /// Tolerances used when generating ground-truth trajectories.
    pub const DATASET: Self = Self { rtol: 1e-9, atol: 1e-12, max_steps: 200_000, initial_step: None };
    /// Rollouts of a learned field: dataset tolerances with a tighter step
    /// budget, so the harness adds no error beyond the dataset's own.
    pub const ROLLOUT: Self = Self { rtol: 1e-9, atol: 1e-12, max_steps: 20_000, initial_step: None };

    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::DATASET }
    }

    pub fn validate(&self) -> Result<(), IntegrationError> {
        let step_ok = self.initial_step.map_or(true, |h| h > 0.0 && h.is_finite());
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.max_steps >= 1 && step_ok) {
            return Err(IntegrationError::InvalidConfig);
        }
        Ok(())
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::DATASET
    }
}

/// Failure reported by a vector field.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct FieldError(pub String);

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum IntegrationError {
    #[error("tolerances must be positive and max_steps at least 1")]
    InvalidConfig,
    #[error("output times must be finite, strictly increasing and start at the initial time")]
    InvalidTimes,
    #[error("step size underflow (h = {h:e}) at t = {t}; the problem looks stiff")]
    StepUnderflow { t: f64, h: f64 },
    #[error("exceeded {steps} steps at t = {t}")]
    MaxSteps { t: f64, steps: usize },
    #[error("non-finite derivative at t = {t}")]
    NonFinite { t: f64 },
    #[error("vector field failed at t = {t}: {source}")]
    Field { t: f64, source: FieldError },
}

impl IntegrationError {
    /// Time at which integration stopped, when known.
    pub fn time(&self) -> Option<f64> {
        match self {
            Self::StepUnderflow { t, .. } | Self::MaxSteps { t, .. } | Self::NonFinite { t } | Self::Field { t, .. } => {
                Some(*t)
            }
            _ => None,
        }
    }
}

/// `dy/dt = f(t, y)`.
pub trait VectorField {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), FieldError>;
}

impl<F> VectorField for F
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), FieldError>,
{
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), FieldError> {
        self(t, y, dy)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// States at the requested output times.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Solution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: Stats,
    /// End times of accepted steps. Step selection depends only on the
    /// first and last output times.
    pub step_times: Vec<f64>,
}

fn eval_checked<F: VectorField + ?Sized>(
    field: &mut F,
    t: f64,
    y: &[f64],
    dy: &mut [f64],
    stats: &mut Stats,
) -> Result<(), IntegrationError> {
    stats.evaluations += 1;
    field.eval(t, y, dy).map_err(|source| IntegrationError::Field { t, source })?;
    if dy.iter().any(|v| !v.is_finite()) {
        return Err(IntegrationError::NonFinite { t });
    }
    Ok(())
}

// Dormand–Prince 5(4) tableau.
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
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension (4th order).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// Step-size controller (PI with beta = 0.04).
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FAC_MIN_INV: f64 = 5.0; // step may shrink to h/5
const FAC_MAX_INV: f64 = 0.1; // and grow to 10h
const MIN_STEP: f64 = 1e-14;

/// Integrates `field` from `(t_eval[0], y0)` and returns the state at every
/// time in `t_eval`.
pub fn integrate<F: VectorField + ?Sized>(
    field: &mut F,
    y0: &[f64],
    t_eval: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Solution, IntegrationError> {
    let (solution, error) = integrate_partial(field, y0, t_eval, cfg);
    match error {
        Some(e) => Err(e),
        None => Ok(solution),
    }
}

/// Like [`integrate`], but on failure returns the outputs reached before the
/// error alongside it.
pub fn integrate_partial<F: VectorField + ?Sized>(
    field: &mut F,
    y0: &[f64],
    t_eval: &[f64],
    cfg: &IntegratorConfig,
) -> (Solution, Option<IntegrationError>) {
    let mut solution = Solution::default();
    if let Err(e) = cfg.validate() {
        return (solution, Some(e));
    }
    let valid_times = !t_eval.is_empty()
        && t_eval.iter().all(|t| t.is_finite())
        && t_eval.windows(2).all(|w| w[1] > w[0]);
    if !valid_times {
        return (solution, Some(IntegrationError::InvalidTimes));
    }
    let error = dopri5(field, y0, t_eval, cfg, &mut solution).err();
    (solution, error)
}

fn error_norm(err: &[f64], y: &[f64], y_new: &[f64], cfg: &IntegratorConfig) -> f64 {
    let n = err.len().max(1) as f64;
    let sum: f64 = err
        .iter()
        .zip(y.iter().zip(y_new))
        .map(|(e, (a, b))| {
            let sk = cfg.atol + cfg.rtol * a.abs().max(b.abs());
            (e / sk) * (e / sk)
        })
        .sum();
    math::sqrt(sum / n)
}

fn initial_step<F: VectorField + ?Sized>(
    field: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    h_max: f64,
    cfg: &IntegratorConfig,
    stats: &mut Stats,
) -> Result<f64, IntegrationError> {
    let n = y.len().max(1) as f64;
    let sk = |v: f64| cfg.atol + cfg.rtol * v.abs();
    let dnf = y.iter().zip(f0).map(|(yi, fi)| sq(fi / sk(*yi))).sum::<f64>() / n;
    let dny = y.iter().map(|yi| sq(yi / sk(*yi))).sum::<f64>() / n;
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { 0.01 * math::sqrt(dny / dnf) };
    h = h.min(h_max);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(yi, fi)| yi + h * fi).collect();
    let mut f1 = vec![0.0; y.len()];
    eval_checked(field, t + h, &y1, &mut f1, stats)?;
    let der2 = math::sqrt(
        f1.iter().zip(f0).zip(y).map(|((a, b), yi)| sq((a - b) / sk(*yi))).sum::<f64>() / n,
    ) / h;
    let der12 = der2.abs().max(math::sqrt(dnf));
    let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { math::powf(0.01 / der12, 0.2) };
    Ok((100.0 * h).min(h1).min(h_max))
}

fn dopri5<F: VectorField + ?Sized>(
    field: &mut F,
    y0: &[f64],
    t_eval: &[f64],
    cfg: &IntegratorConfig,
    out: &mut Solution,
) -> Result<(), IntegrationError> {
    let n = y0.len();
    let t_end = *t_eval.last().expect("non-empty");
    let mut t = t_eval[0];
    let mut y = y0.to_vec();
    out.times.push(t);
    out.states.push(y.clone());
    let mut next_out = 1;
    if t_eval.len() == 1 {
        return Ok(());
    }

    let mut stats = Stats::default();
    let mut k1 = vec![0.0; n];
    eval_checked(field, t, &y, &mut k1, &mut stats)?;
    let h_max = t_end - t;
    let mut h = match cfg.initial_step {
        Some(h0) => h0.min(h_max),
        None => initial_step(field, t, &y, &k1, h_max, cfg, &mut stats)?,
    };

    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut fac_old = 1e-4;
    let mut last_rejected = false;
    let mut steps = 0usize;

    while next_out < t_eval.len() {
        if steps >= cfg.max_steps {
            out.stats = stats;
            return Err(IntegrationError::MaxSteps { t, steps });
        }
        let remaining = t_end - t;
        let final_step = 1.01 * h >= remaining;
        if final_step {
            h = remaining;
        }
        steps += 1;

        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        eval_checked(field, t + C2 * h, &tmp, &mut k2, &mut stats)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        eval_checked(field, t + C3 * h, &tmp, &mut k3, &mut stats)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        eval_checked(field, t + C4 * h, &tmp, &mut k4, &mut stats)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        eval_checked(field, t + C5 * h, &tmp, &mut k5, &mut stats)?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if final_step { t_end } else { t + h };
        eval_checked(field, t_new, &tmp, &mut k6, &mut stats)?;
        for i in 0..n {
            y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        eval_checked(field, t_new, &y_new, &mut k7, &mut stats)?;
        for i in 0..n {
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let err_norm = error_norm(&err, &y, &y_new, cfg);
        if !err_norm.is_finite() {
            out.stats = stats;
            return Err(IntegrationError::NonFinite { t: t_new });
        }

        let fac11 = math::powf(err_norm, EXPO1);
        if err_norm <= 1.0 {
            let fac = (fac11 / math::powf(fac_old, BETA) / SAFETY).clamp(FAC_MAX_INV, FAC_MIN_INV);
            fac_old = err_norm.max(1e-4);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            last_rejected = false;
            stats.accepted += 1;
            out.step_times.push(t_new);

            // Dense output on (t, t_new].
            while next_out < t_eval.len() && t_eval[next_out] <= t_new {
                let te = t_eval[next_out];
                let state = if te == t_new {
                    y_new.clone()
                } else {
                    let theta = (te - t) / h;
                    let theta1 = 1.0 - theta;
                    (0..n)
                        .map(|i| {
                            let ydiff = y_new[i] - y[i];
                            let bspl = h * k1[i] - ydiff;
                            let r4 = ydiff - h * k7[i] - bspl;
                            let r5 = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                            y[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)))
                        })
                        .collect()
                };
                out.times.push(te);
                out.states.push(state);
                next_out += 1;
            }

            core::mem::swap(&mut k1, &mut k7);
            core::mem::swap(&mut y, &mut y_new);
            t = t_new;
            h = h_new;
        } else {
            h /= (fac11 / SAFETY).min(FAC_MIN_INV);
            last_rejected = true;
            stats.rejected += 1;
            if h < MIN_STEP {
                out.stats = stats;
                return Err(IntegrationError::StepUnderflow { t, h });
            }
        }
    }
    out.stats = stats;
    Ok(())
}

/// Classical fixed-step fourth-order Runge–Kutta; outputs every step.
pub fn rk4_fixed<F: VectorField + ?Sized>(
    field: &mut F,
    t0: f64,
    y0: &[f64],
    dt: f64,
    n_steps: usize,
) -> Result<Solution, IntegrationError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(IntegrationError::InvalidConfig);
    }
    let n = y0.len();
    let mut stats = Stats::default();
    let mut sol = Solution { times: vec![t0], states: vec![y0.to_vec()], ..Solution::default() };
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for step in 0..n_steps {
        let t = t0 + step as f64 * dt;
        eval_checked(field, t, &y, &mut k1, &mut stats)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        eval_checked(field, t + 0.5 * dt, &tmp, &mut k2, &mut stats)?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        eval_checked(field, t + 0.5 * dt, &tmp, &mut k3, &mut stats)?;
        for i in 0..n {
            tmp[i] = y[i] + dt * k3[i];
        }
        eval_checked(field, t + dt, &tmp, &mut k4, &mut stats)?;
        for i in 0..n {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(IntegrationError::NonFinite { t: t + dt });
        }
        stats.accepted += 1;
        let t_next = t0 + (step + 1) as f64 * dt;
        sol.times.push(t_next);
        sol.step_times.push(t_next);
        sol.states.push(y.clone());
    }
    sol.stats = stats;
    Ok(sol)
}

#[inline]
fn sq(x: f64) -> f64 {
    x * x
}
