//! Dormand–Prince 5(4) integrator with dense output and sign-change events.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Smallest step the controller may shrink to before giving up.
pub const MIN_STEP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: None,
            h_max: None,
            max_steps: 1_000_000,
        }
    }
}

impl OdeOptions {
    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }
}

/// Interpolation data for one accepted step (Hairer's `contd5`).
#[derive(Debug, Clone, PartialEq)]
struct DenseStep {
    t0: f64,
    h: f64,
    coeffs: [DVector<f64>; 5],
}

impl DenseStep {
    fn eval(&self, t: f64) -> DVector<f64> {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let [r1, r2, r3, r4, r5] = &self.coeffs;
        r1 + (r2 + (r3 + (r4 + r5 * s1) * s) * s1) * s
    }

    fn eval_component(&self, t: f64, i: usize) -> f64 {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let c = |k: usize| self.coeffs[k][i];
        c(0) + s * (c(1) + s1 * (c(2) + s * (c(3) + s1 * c(4))))
    }
}

/// Sampled solution: strictly increasing times, states, and (optionally)
/// the control applied at each sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Empty when the vector field has no notion of control.
    pub controls: Vec<f64>,
    dense: Vec<DenseStep>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<DVector<f64>>, controls: Vec<f64>) -> Self {
        Self {
            times,
            states,
            controls,
            dense: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    pub fn end_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// State at `t`, by the integrator's interpolant when available and
    /// linear interpolation between samples otherwise.
    pub fn state_at(&self, t: f64) -> Option<DVector<f64>> {
        let (first, last) = (*self.times.first()?, *self.times.last()?);
        if t < first || t > last {
            return None;
        }
        if !self.dense.is_empty() {
            // last step starting at or before t; a step cut short by an event
            // may overhang the first step of the next segment
            let idx = self.dense.partition_point(|d| d.t0 <= t).saturating_sub(1);
            return Some(self.dense[idx].eval(t));
        }
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return Some(self.states[0].clone());
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        Some(&self.states[k - 1] * (1.0 - w) + &self.states[k] * w)
    }

    /// Times strictly increasing, states finite, and nonnegative up to
    /// `tol` wherever the recorded control is nonnegative.
    pub fn check_invariants(&self, tol: f64) -> bool {
        let increasing = self.times.windows(2).all(|w| w[1] > w[0]);
        let finite = self.states.iter().all(|x| x.iter().all(|v| v.is_finite()));
        let nonneg = self.controls.is_empty()
            || self
                .states
                .iter()
                .zip(&self.controls)
                .all(|(x, &u)| u < 0.0 || x.iter().all(|&v| v >= -tol));
        increasing && finite && nonneg && self.times.len() == self.states.len()
    }

    /// Appends `other`, dropping its first sample when it repeats our last time.
    pub fn append(&mut self, mut other: Trajectory) {
        let skip = match (self.times.last(), other.times.first()) {
            (Some(&a), Some(&b)) if b <= a => 1,
            _ => 0,
        };
        self.times.extend(other.times.drain(skip..));
        self.states.extend(other.states.drain(skip..));
        let cskip = skip.min(other.controls.len());
        self.controls.extend(other.controls.drain(cskip..));
        self.dense.append(&mut other.dense);
    }

    /// Fills the control column with a single value.
    pub fn with_constant_control(mut self, u: f64) -> Self {
        self.controls = vec![u; self.times.len()];
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventMode {
    Record,
    StopAtFirst,
}

/// Integrates `x' = f(t, x)` from `t0` to `t1`.
pub fn integrate<F>(f: F, x0: &DVector<f64>, t0: f64, t1: f64, opts: &OdeOptions) -> Result<Trajectory>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    run(f, x0, t0, t1, opts, None).map(|(traj, _)| traj)
}

/// Integrates and reports every time component `watch` changes sign class
/// (positive vs. non-positive), localized by bisection on the interpolant.
pub fn integrate_with_sign_event<F>(
    f: F,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    watch: usize,
    opts: &OdeOptions,
) -> Result<(Trajectory, Vec<f64>)>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    check_watch(x0, watch)?;
    run(f, x0, t0, t1, opts, Some((watch, EventMode::Record)))
}

/// Like [`integrate_with_sign_event`] but stops at the first crossing. The
/// trajectory then ends at the crossing, on the new side of the sign change.
pub fn integrate_until_sign_change<F>(
    f: F,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    watch: usize,
    opts: &OdeOptions,
) -> Result<(Trajectory, Option<f64>)>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    check_watch(x0, watch)?;
    let (traj, events) = run(f, x0, t0, t1, opts, Some((watch, EventMode::StopAtFirst)))?;
    Ok((traj, events.first().copied()))
}

fn check_watch(x0: &DVector<f64>, watch: usize) -> Result<()> {
    if watch >= x0.len() {
        return Err(Error::Domain(format!(
            "watched component {watch} out of range for dimension {}",
            x0.len()
        )));
    }
    Ok(())
}

// Dormand–Prince tableau.
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
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn scaled_norm(v: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, opts: &OdeOptions) -> f64 {
    let n = v.len().max(1) as f64;
    let sum: f64 = v
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn initial_step<F>(f: &mut F, t0: f64, x0: &DVector<f64>, f0: &DVector<f64>, span: f64, opts: &OdeOptions) -> f64
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let d0 = scaled_norm(x0, x0, x0, opts);
    let d1 = scaled_norm(f0, x0, x0, opts);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let x1 = x0 + f0 * h0;
    let f1 = f(t0 + h0, &x1);
    let d2 = scaled_norm(&(&f1 - f0), x0, x0, opts) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

fn positive(v: f64) -> bool {
    v > 0.0
}

fn run<F>(
    mut f: F,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
    event: Option<(usize, EventMode)>,
) -> Result<(Trajectory, Vec<f64>)>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    if !(t0.is_finite() && t1.is_finite()) || t1 < t0 {
        return Err(Error::Domain(format!("need finite t0 <= t1, got [{t0}, {t1}]")));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial state is not finite".into()));
    }

    let mut traj = Trajectory::new(vec![t0], vec![x0.clone()], Vec::new());
    let mut events = Vec::new();
    let span = t1 - t0;
    if span == 0.0 {
        return Ok((traj, events));
    }

    let mut t = t0;
    let mut y = x0.clone();
    let mut k1 = f(t, &y);
    let mut h = opts
        .h_init
        .unwrap_or_else(|| initial_step(&mut f, t0, x0, &k1, span, opts));
    if let Some(h_max) = opts.h_max {
        h = h.min(h_max);
    }
    let mut rejected_last = false;
    let mut steps = 0usize;

    while t < t1 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::TooManySteps(opts.max_steps));
        }
        let last = t + h >= t1;
        let h_step = if last { t1 - t } else { h };

        let k2 = f(t + C2 * h_step, &(&y + &k1 * (A21 * h_step)));
        let k3 = f(t + C3 * h_step, &(&y + (&k1 * A31 + &k2 * A32) * h_step));
        let k4 = f(
            t + C4 * h_step,
            &(&y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h_step),
        );
        let k5 = f(
            t + C5 * h_step,
            &(&y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h_step),
        );
        let k6 = f(
            t + h_step,
            &(&y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h_step),
        );
        let y_new = &y + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h_step;
        let k7 = f(t + h_step, &y_new);
        let err_vec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h_step;
        let err = scaled_norm(&err_vec, &y, &y_new, opts);

        if !err.is_finite() || err > 1.0 {
            let fac = if err.is_finite() {
                (0.9 * err.powf(-0.2)).max(0.2)
            } else {
                0.2
            };
            h = h_step * fac;
            rejected_last = true;
            if h < MIN_STEP {
                return Err(Error::StepUnderflow { t, h });
            }
            continue;
        }

        let t_new = if last { t1 } else { t + h_step };
        let ydiff = &y_new - &y;
        let bspl = &k1 * h_step - &ydiff;
        let dense = DenseStep {
            t0: t,
            h: h_step,
            coeffs: [
                y.clone(),
                ydiff.clone(),
                bspl.clone(),
                &ydiff - &k7 * h_step - &bspl,
                (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h_step,
            ],
        };

        if let Some((watch, mode)) = event {
            if positive(y[watch]) != positive(y_new[watch]) {
                let (t_event, y_event) = locate_crossing(&dense, t, t_new, watch, positive(y[watch]));
                events.push(t_event);
                if mode == EventMode::StopAtFirst {
                    traj.times.push(t_event);
                    traj.states.push(y_event);
                    traj.dense.push(dense);
                    return Ok((traj, events));
                }
            }
        }

        traj.times.push(t_new);
        traj.states.push(y_new.clone());
        traj.dense.push(dense);

        t = t_new;
        y = y_new;
        k1 = k7;

        let mut fac = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
        fac = fac.clamp(0.2, 5.0);
        if rejected_last {
            fac = fac.min(1.0);
        }
        rejected_last = false;
        h = h_step * fac;
        if let Some(h_max) = opts.h_max {
            h = h.min(h_max);
        }
    }
    Ok((traj, events))
}

/// Bisects the interpolant down to floating-point resolution. Returns the
/// first time on the new side, with the interpolated state there.
fn locate_crossing(dense: &DenseStep, t_lo: f64, t_hi: f64, watch: usize, lo_side: bool) -> (f64, DVector<f64>) {
    let (mut lo, mut hi) = (t_lo, t_hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if positive(dense.eval_component(mid, watch)) == lo_side {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut state = dense.eval(hi);
    // pin the watched component to the new side so a restart does not re-trigger
    if positive(state[watch]) == lo_side {
        state[watch] = if lo_side { 0.0 } else { f64::MIN_POSITIVE };
    }
    (hi, state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn zero_field_is_constant() {
        let x0 = dv(&[1.0, -2.0, 3.0]);
        let traj = integrate(|_, x| DVector::zeros(x.len()), &x0, 0.0, 5.0, &OdeOptions::default()).unwrap();
        assert!(traj.states.iter().all(|x| x == &x0));
        assert_eq!(traj.end_time(), Some(5.0));
    }

    #[test]
    fn exponential_decay() {
        let opts = OdeOptions::default();
        let traj = integrate(|_, x| -x, &dv(&[1.0]), 0.0, 1.0, &opts).unwrap();
        let got = traj.last_state().unwrap()[0];
        assert!((got - (-1f64).exp()).abs() < opts.rtol * 10.0);
        // dense output between accepted steps
        let mid = traj.state_at(0.37).unwrap()[0];
        assert!((mid - (-0.37f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn empty_interval_returns_initial_point() {
        let traj = integrate(|_, x| -x, &dv(&[2.0]), 1.0, 1.0, &OdeOptions::default()).unwrap();
        assert_eq!(traj.len(), 1);
        assert!(integrate(|_, x| -x, &dv(&[2.0]), 1.0, 0.5, &OdeOptions::default()).is_err());
    }

    #[test]
    fn step_underflow_is_reported() {
        // blows up in finite time at t = 1
        let res = integrate(|_, x| x.map(|v| v * v), &dv(&[1.0]), 0.0, 2.0, &OdeOptions::default());
        assert!(matches!(
            res,
            Err(Error::StepUnderflow { .. }) | Err(Error::TooManySteps(_))
        ));
    }

    #[test]
    fn single_linear_crossing() {
        // x' = -1 from x = 0.7: root at t = 0.7
        let (_, events) = integrate_with_sign_event(
            |_, x| DVector::from_element(x.len(), -1.0),
            &dv(&[0.7]),
            0.0,
            2.0,
            0,
            &OdeOptions::default(),
        )
        .unwrap();
        assert_eq!(events.len(), 1);
        assert!((events[0] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn sine_crossings() {
        // (sin, cos) rotation; sin changes sign at pi and 2pi
        let (_, events) = integrate_with_sign_event(
            |_, x| dv(&[x[1], -x[0]]),
            &dv(&[0.0, 1.0]),
            0.0,
            7.0,
            0,
            &OdeOptions::default(),
        )
        .unwrap();
        // t = 0 already sits in the non-positive class: the first crossing is into positive
        assert_eq!(events.len(), 3);
        assert!(events[0] < 1e-9);
        assert!((events[1] - std::f64::consts::PI).abs() < 1e-9);
        assert!((events[2] - 2.0 * std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn no_crossing_no_events() {
        let (_, events) = integrate_with_sign_event(|_, x| -x, &dv(&[1.0]), 0.0, 3.0, 0, &OdeOptions::default()).unwrap();
        assert!(events.is_empty());
        let (_, events) = integrate_with_sign_event(
            |_, x| DVector::from_element(x.len(), 0.0),
            &dv(&[4.0]),
            0.0,
            3.0,
            0,
            &OdeOptions::default(),
        )
        .unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn stop_at_first_crossing() {
        let (traj, event) = integrate_until_sign_change(
            |_, _| dv(&[-1.0, 1.0]),
            &dv(&[0.25, 0.0]),
            0.0,
            1.0,
            0,
            &OdeOptions::default(),
        )
        .unwrap();
        let t = event.unwrap();
        assert!((t - 0.25).abs() < 1e-12);
        assert_eq!(traj.end_time(), Some(t));
        assert!(traj.last_state().unwrap()[0] <= 0.0);
        assert!((traj.last_state().unwrap()[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dense_lookup_after_event_restart() {
        let opts = OdeOptions::default();
        let (mut traj, event) =
            integrate_until_sign_change(|_, _| dv(&[-1.0]), &dv(&[0.25]), 0.0, 1.0, 0, &opts).unwrap();
        let te = event.unwrap();
        let x = traj.last_state().unwrap().clone();
        traj.append(integrate(|_, _| dv(&[5.0]), &x, te, 1.0, &opts).unwrap());
        assert!((traj.state_at(0.3).unwrap()[0] - 0.25).abs() < 1e-9);
        assert!((traj.state_at(0.2).unwrap()[0] - 0.05).abs() < 1e-9);
    }

    #[test]
    fn watch_out_of_range() {
        assert!(integrate_with_sign_event(|_, x| -x, &dv(&[1.0]), 0.0, 1.0, 3, &OdeOptions::default()).is_err());
    }

    #[test]
    fn append_drops_duplicate_junction() {
        let a = Trajectory::new(vec![0.0, 1.0], vec![dv(&[0.0]), dv(&[1.0])], vec![1.0, 1.0]);
        let b = Trajectory::new(vec![1.0, 2.0], vec![dv(&[1.0]), dv(&[2.0])], vec![0.0, 0.0]);
        let mut c = a.clone();
        c.append(b);
        assert_eq!(c.times, vec![0.0, 1.0, 2.0]);
        assert_eq!(c.controls, vec![1.0, 1.0, 0.0]);
        assert!(c.check_invariants(1e-9));
        assert_eq!(c.state_at(1.5).unwrap()[0], 1.5);
    }
}
