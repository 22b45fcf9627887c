//! Bang-bang structure enumeration.
//!
//! With a controllable pair `(A, B)` and a real spectrum, a time-optimal
//! control of the 4-state model switches at most three times. Every
//! alternating pattern of `{u_max, 0}` with up to three switches is a
//! candidate; each one is solved for its segment durations by exact
//! propagation and finite-difference root-finding.
//!
//! A pattern with more unknowns than the two fast-state equations has a
//! continuum of solutions, so each pattern is solved for its *minimum*
//! final time: the residual manifold is descended along its tangent in
//! `t_f` until a segment length hits zero or the projected gradient
//! vanishes. A pattern whose minimum is only reached by collapsing one of
//! its segments is reported infeasible: it degenerates into a shorter
//! pattern that is enumerated on its own.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector4};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lti::LtiSystem;
use crate::problem::{ControlSchedule, TimeOptimalProblem};

/// Input level of one bang-bang segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Max,
    Zero,
}

impl Level {
    pub fn value(self, u_max: f64) -> f64 {
        match self {
            Level::Max => u_max,
            Level::Zero => 0.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Level::Max => Level::Zero,
            Level::Zero => Level::Max,
        }
    }
}

/// An alternating sequence of levels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Pattern {
    levels: Vec<Level>,
}

impl Pattern {
    pub fn new(start: Level, switches: usize) -> Self {
        let levels = std::iter::successors(Some(start), |l| Some(l.flipped()))
            .take(switches + 1)
            .collect();
        Self { levels }
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn switches(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn start(&self) -> Level {
        self.levels[0]
    }

    /// Strategy number: odd for bolus-first patterns, `2k + 1` / `2k + 2`
    /// for `k` switches.
    pub fn id(&self) -> usize {
        let base = 2 * self.switches() + 1;
        match self.start() {
            Level::Max => base,
            Level::Zero => base + 1,
        }
    }

    pub fn values(&self, u_max: f64) -> Vec<f64> {
        self.levels.iter().map(|l| l.value(u_max)).collect()
    }
}

/// All alternating patterns with at most `max_switches` switches, ordered
/// by strategy number. `start = Some(Level::Max)` keeps only the
/// bolus-first patterns.
pub fn enumerate_patterns(start: Option<Level>, max_switches: usize) -> Vec<Pattern> {
    let starts: Vec<Level> = match start {
        Some(level) => vec![level],
        None => vec![Level::Max, Level::Zero],
    };
    (0..=max_switches)
        .flat_map(|k| starts.iter().map(move |&s| Pattern::new(s, k)))
        .collect()
}

/// State at `t_f` under `schedule`, by composing exact constant-input steps.
pub fn schedule_endpoint(sys: &LtiSystem, x0: &Vector4<f64>, schedule: &ControlSchedule) -> Result<Vector4<f64>> {
    schedule
        .segments()
        .try_fold(*x0, |x, (start, end, u)| sys.propagate_constant(&x, u, end - start))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOptions {
    /// Upper bound on `t_f` for the multistart domain, min.
    pub t_max: f64,
    /// Grid points per time dimension.
    pub grid_points: usize,
    pub max_iterations: usize,
    /// Convergence tolerance on `‖residual‖∞`, mg.
    pub residual_tol: f64,
    pub step_tol: f64,
    /// Starts ending above this residual mark a pattern as having no solution.
    pub infeasible_residual: f64,
    /// Segments shorter than this count as collapsed, min.
    pub min_segment: f64,
    pub fd_step: f64,
    /// Only consider patterns that open with a bolus.
    pub bolus_first: bool,
    pub max_switches: usize,
}

impl Default for StrategyOptions {
    fn default() -> Self {
        Self {
            t_max: 30.0,
            grid_points: 8,
            max_iterations: 100,
            residual_tol: 1e-9,
            step_tol: 1e-12,
            infeasible_residual: 1e-6,
            min_segment: 1e-6,
            fd_step: 1e-7,
            bolus_first: true,
            max_switches: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Feasible,
    /// No start brought the residual below the tolerance.
    NoSolution,
    /// The minimum-time point needs the listed segments to have zero length.
    Degenerate { collapsed_segments: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyResult {
    pub pattern: Pattern,
    pub strategy: usize,
    pub feasible: bool,
    pub verdict: Verdict,
    /// Present only when feasible.
    pub schedule: Option<ControlSchedule>,
    /// Fast-state residual at the best point found, mg.
    pub residual: [f64; 2],
    /// Segment durations of the best point found (collapsed ones are zero).
    pub durations: Vec<f64>,
    pub starts_tried: usize,
    pub starts_converged: usize,
}

impl StrategyResult {
    pub fn t_f(&self) -> Option<f64> {
        self.schedule.as_ref().map(ControlSchedule::t_f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeOptimalSolution {
    pub best: StrategyResult,
    /// Every pattern examined, in strategy order.
    pub candidates: Vec<StrategyResult>,
}

impl TimeOptimalSolution {
    pub fn candidate(&self, strategy: usize) -> Option<&StrategyResult> {
        self.candidates.iter().find(|c| c.strategy == strategy)
    }
}

/// Fast-state residual as a function of segment durations.
struct DurationProblem<'a> {
    prob: &'a TimeOptimalProblem,
    values: Vec<f64>,
    fd_step: f64,
}

impl DurationProblem<'_> {
    fn residual(&self, d: &[f64]) -> Vector2<f64> {
        let sys = self.prob.system();
        let mut x = *self.prob.x0();
        for (&u, &dt) in self.values.iter().zip(d) {
            x = sys
                .propagate_constant(&x, u, dt.max(0.0))
                .expect("finite nonnegative durations");
        }
        let r = self.prob.fast_residual(&x);
        Vector2::new(r[0], r[1])
    }

    /// Central differences, one-sided at the `d >= 0` boundary.
    fn jacobian(&self, d: &[f64]) -> DMatrix<f64> {
        let m = d.len();
        let mut jac = DMatrix::zeros(2, m);
        let mut work = d.to_vec();
        for i in 0..m {
            let h = self.fd_step * d[i].abs().max(1.0);
            let hi = d[i] + h;
            let lo = (d[i] - h).max(0.0);
            work[i] = hi;
            let rp = self.residual(&work);
            work[i] = lo;
            let rm = self.residual(&work);
            work[i] = d[i];
            jac.set_column(i, &((rp - rm) / (hi - lo)));
        }
        jac
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    durations: Vec<f64>,
    residual: Vector2<f64>,
    converged: bool,
}

fn restrict(jac: &DMatrix<f64>, free: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(2, free.len(), |r, c| jac[(r, free[c])])
}

fn inf_norm(r: &Vector2<f64>) -> f64 {
    r[0].abs().max(r[1].abs())
}

impl DurationProblem<'_> {
    /// Damped least-squares Newton on the free durations, projected onto `d >= 0`.
    fn restore(&self, d: &[f64], active: &[bool], opts: &StrategyOptions) -> (Vec<f64>, Vector2<f64>) {
        let free: Vec<usize> = (0..d.len()).filter(|&i| !active[i]).collect();
        let mut d = d.to_vec();
        let mut r = self.residual(&d);
        if free.is_empty() {
            return (d, r);
        }
        let mut mu = 1e-3;
        for _ in 0..opts.max_iterations {
            if inf_norm(&r) < 0.1 * opts.residual_tol {
                break;
            }
            let jf = restrict(&self.jacobian(&d), &free);
            let jj = &jf * jf.transpose();
            let gram = Matrix2::from_fn(|i, j| jj[(i, j)]);
            let mut accepted = false;
            let mut step_norm = 0.0;
            for _ in 0..40 {
                let damped = gram + Matrix2::identity() * mu;
                let Some(y) = damped.try_inverse().map(|inv| inv * r) else {
                    mu *= 4.0;
                    continue;
                };
                let step = -(jf.transpose() * y);
                let mut trial = d.clone();
                for (k, &i) in free.iter().enumerate() {
                    trial[i] = (d[i] + step[k]).max(0.0);
                }
                let rt = self.residual(&trial);
                if rt.norm() < r.norm() {
                    step_norm = step.norm();
                    d = trial;
                    r = rt;
                    mu = (mu / 5.0).max(1e-15);
                    accepted = true;
                    break;
                }
                mu *= 4.0;
            }
            if !accepted || step_norm < opts.step_tol {
                break;
            }
        }
        (d, r)
    }

    /// Projection of `∇ t_f = 1` onto the tangent space of the free block.
    fn projected_gradient(&self, jac: &DMatrix<f64>, free: &[usize]) -> Option<DVector<f64>> {
        let jf = restrict(jac, free);
        let ones = DVector::from_element(free.len(), 1.0);
        let gram = (&jf * jf.transpose()).try_inverse()?;
        Some(&ones - jf.transpose() * (gram * (&jf * &ones)))
    }

    /// Restores feasibility from `start`, then walks down `t_f` along the
    /// solution manifold with an active set on `d >= 0`.
    fn min_time_from(&self, start: &[f64], opts: &StrategyOptions) -> Candidate {
        let m = start.len();
        let mut active = vec![false; m];
        let tol = 0.1 * opts.residual_tol;
        let (mut d, mut r) = self.restore(start, &active, opts);
        if inf_norm(&r) >= tol {
            return Candidate {
                durations: d,
                residual: r,
                converged: false,
            };
        }

        let mut alpha = 0.1;
        let mut releases = 0;
        for _ in 0..opts.max_iterations * 4 {
            let free: Vec<usize> = (0..m).filter(|&i| !active[i]).collect();
            let jac = self.jacobian(&d);
            let g = if free.len() > 2 {
                self.projected_gradient(&jac, &free)
            } else {
                None
            };
            let stationary = g.as_ref().is_none_or(|g| g.norm() < 1e-9);
            if stationary {
                // release a bound whose removal lets t_f decrease further
                let mut released = false;
                if releases < 2 * m {
                    for i in (0..m).filter(|&i| active[i]) {
                        let mut trial_free = free.clone();
                        trial_free.push(i);
                        trial_free.sort_unstable();
                        if trial_free.len() <= 2 {
                            continue;
                        }
                        if let Some(gt) = self.projected_gradient(&jac, &trial_free) {
                            let pos = trial_free.iter().position(|&j| j == i).unwrap();
                            if gt[pos] < -1e-9 {
                                active[i] = false;
                                releases += 1;
                                released = true;
                                break;
                            }
                        }
                    }
                }
                if released {
                    continue;
                }
                break;
            }
            let g = g.unwrap();

            let t_f: f64 = d.iter().sum();
            let mut accepted = false;
            while alpha > 1e-12 {
                let mut step = vec![0.0; m];
                for (k, &i) in free.iter().enumerate() {
                    step[i] = -alpha * g[k];
                }
                // ratio test against the d >= 0 bounds
                let mut theta: f64 = 1.0;
                for &i in &free {
                    if step[i] < 0.0 {
                        theta = theta.min(-d[i] / step[i]);
                    }
                }
                let mut trial_active = active.clone();
                let mut trial: Vec<f64> = d.iter().zip(&step).map(|(a, s)| a + theta * s).collect();
                for &i in &free {
                    if trial[i] <= 1e-14 {
                        trial[i] = 0.0;
                        trial_active[i] = true;
                    }
                }
                let (rd, rr) = self.restore(&trial, &trial_active, opts);
                if inf_norm(&rr) < tol && rd.iter().sum::<f64>() < t_f - 1e-13 {
                    d = rd;
                    r = rr;
                    active = trial_active;
                    alpha = (alpha * 2.0).min(10.0);
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Candidate {
            durations: d,
            residual: r,
            converged: true,
        }
    }
}

/// Ordered-simplex multistart grid in duration coordinates.
fn start_grid(segments: usize, opts: &StrategyOptions) -> Vec<Vec<f64>> {
    let n = opts.grid_points.max(1);
    let fractions: Vec<f64> = (1..=n).map(|j| j as f64 / (n + 1) as f64).collect();
    let mut combos: Vec<Vec<f64>> = Vec::new();
    choose(&fractions, segments - 1, 0, &mut Vec::new(), &mut combos);
    let mut starts = Vec::new();
    for i in 1..=n {
        let t_f = opts.t_max * i as f64 / n as f64;
        for combo in &combos {
            let mut prev = 0.0;
            let mut d = Vec::with_capacity(segments);
            for &f in combo.iter().chain(std::iter::once(&1.0)) {
                d.push((f - prev) * t_f);
                prev = f;
            }
            starts.push(d);
        }
    }
    starts
}

fn choose(items: &[f64], k: usize, from: usize, current: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for i in from..items.len() {
        current.push(items[i]);
        choose(items, k, i + 1, current, out);
        current.pop();
    }
}

/// Solves one pattern for its minimum-time durations.
pub fn solve_pattern(prob: &TimeOptimalProblem, pattern: &Pattern, opts: &StrategyOptions) -> StrategyResult {
    let values = pattern.values(prob.u_max());
    let dp = DurationProblem {
        prob,
        values: values.clone(),
        fd_step: opts.fd_step,
    };
    let starts = start_grid(values.len(), opts);
    let candidates: Vec<Candidate> = starts.par_iter().map(|s| dp.min_time_from(s, opts)).collect();

    let best_residual = candidates
        .iter()
        .min_by(|a, b| inf_norm(&a.residual).total_cmp(&inf_norm(&b.residual)))
        .expect("grid is never empty");

    let converged: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| {
            c.converged && inf_norm(&c.residual) < opts.residual_tol && c.durations.iter().sum::<f64>() <= opts.t_max
        })
        .collect();

    let mut result = StrategyResult {
        pattern: pattern.clone(),
        strategy: pattern.id(),
        feasible: false,
        verdict: Verdict::NoSolution,
        schedule: None,
        residual: [best_residual.residual[0], best_residual.residual[1]],
        durations: best_residual.durations.clone(),
        starts_tried: starts.len(),
        starts_converged: converged.len(),
    };

    // first minimum in start order wins ties
    let Some(best) = converged.iter().copied().reduce(|acc, c| {
        let (ta, tc) = (acc.durations.iter().sum::<f64>(), c.durations.iter().sum::<f64>());
        if tc < ta - 1e-12 {
            c
        } else {
            acc
        }
    }) else {
        return result;
    };

    result.residual = [best.residual[0], best.residual[1]];
    result.durations = best.durations.clone();
    let collapsed: Vec<usize> = best
        .durations
        .iter()
        .enumerate()
        .filter(|(_, &d)| d < opts.min_segment)
        .map(|(i, _)| i)
        .collect();
    if !collapsed.is_empty() {
        result.verdict = Verdict::Degenerate {
            collapsed_segments: collapsed,
        };
        return result;
    }
    match ControlSchedule::from_durations(&values, &best.durations) {
        Ok(schedule) if schedule.switch_count() == pattern.switches() => {
            result.schedule = Some(schedule);
            result.feasible = true;
            result.verdict = Verdict::Feasible;
        }
        _ => {
            result.verdict = Verdict::Degenerate {
                collapsed_segments: Vec::new(),
            };
        }
    }
    result
}

/// Solves every candidate pattern and keeps the fastest feasible one
/// (ties go to fewer switches).
pub fn solve_time_optimal(prob: &TimeOptimalProblem, opts: &StrategyOptions) -> Result<TimeOptimalSolution> {
    let sys = prob.system();
    let rank = sys.kalman_rank();
    if rank < 4 {
        return Err(Error::NotControllable(rank));
    }
    if !sys.has_real_spectrum() {
        return Err(Error::ComplexSpectrum);
    }
    let start = opts.bolus_first.then_some(Level::Max);
    let patterns = enumerate_patterns(start, opts.max_switches);
    let candidates: Vec<StrategyResult> = patterns.iter().map(|p| solve_pattern(prob, p, opts)).collect();

    let best = candidates
        .iter()
        .filter(|c| c.feasible)
        .min_by(|a, b| {
            let (ta, tb) = (a.t_f().unwrap(), b.t_f().unwrap());
            if (ta - tb).abs() <= 1e-9 {
                a.pattern.switches().cmp(&b.pattern.switches())
            } else {
                ta.total_cmp(&tb)
            }
        })
        .cloned();
    match best {
        Some(best) => Ok(TimeOptimalSolution { best, candidates }),
        None => Err(Error::Infeasible {
            best_residual: candidates
                .iter()
                .map(|c| c.residual[0].abs().max(c.residual[1].abs()))
                .fold(f64::INFINITY, f64::min),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_numbering() {
        let ids: Vec<usize> = enumerate_patterns(None, 3).iter().map(Pattern::id).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 5, 6, 7, 8]);
        let bolus = enumerate_patterns(Some(Level::Max), 3);
        let shapes: Vec<Vec<Level>> = bolus.iter().map(|p| p.levels().to_vec()).collect();
        use Level::*;
        assert_eq!(
            shapes,
            vec![vec![Max], vec![Max, Zero], vec![Max, Zero, Max], vec![Max, Zero, Max, Zero]]
        );
        assert_eq!(bolus.iter().map(Pattern::id).collect::<Vec<_>>(), vec![1, 3, 5, 7]);
        let none = enumerate_patterns(None, 0);
        assert_eq!(none.len(), 2);
        assert_eq!(none[1].levels(), &[Zero]);
    }

    #[test]
    fn grid_sizes() {
        let opts = StrategyOptions::default();
        assert_eq!(start_grid(1, &opts).len(), 8);
        assert_eq!(start_grid(2, &opts).len(), 64);
        assert_eq!(start_grid(3, &opts).len(), 8 * 28);
        for d in start_grid(4, &opts) {
            assert!(d.iter().all(|&x| x > 0.0));
            assert!(d.iter().sum::<f64>() <= opts.t_max + 1e-12);
        }
    }

    #[test]
    fn endpoint_of_empty_and_equilibrium_schedules() {
        let prob = TimeOptimalProblem::reference();
        let sys = prob.system();
        let x0 = Vector4::new(1.0, 2.0, 3.0, 4.0);
        let empty = ControlSchedule::constant(7.0, 0.0).unwrap();
        assert_eq!(schedule_endpoint(sys, &x0, &empty).unwrap(), x0);
        let eq = prob.equilibrium();
        let hold = ControlSchedule::constant(eq.u_e, 12.0).unwrap();
        let x = schedule_endpoint(sys, &eq.x_e, &hold).unwrap();
        assert!((x - eq.x_e).amax() < 1e-9);
    }

    #[test]
    fn zero_input_from_rest_has_no_solution() {
        let prob = TimeOptimalProblem::reference();
        let res = solve_pattern(&prob, &Pattern::new(Level::Zero, 0), &StrategyOptions::default());
        assert!(!res.feasible);
        assert_eq!(res.verdict, Verdict::NoSolution);
        assert!((res.residual[0] + 14.518).abs() < 1e-9);
    }
}
