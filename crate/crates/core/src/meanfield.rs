//! Degree-class mean-field model of Po2 collaboration on an uncorrelated graph.
//!
//! The state is the matrix of tail probabilities `s[k][i]`: the fraction of
//! degree-`k` users holding at least `i` tasks. For `i >= 1` the drift is
//!
//! ```text
//! ds[k][i]/dt = -mu (s[k][i] - s[k][i+1])
//!             + a (s[k][i-1] - s[k][i]) z[k][i]
//! z[k][i]     = 1/2 sum_k' ((k' + k) / kbar) p(k') (s[k'][i-1] + s[k'][i])
//! ```
//!
//! with `a = x_c * lambda` the collaborative arrival rate, `s[k][0] = 1` and
//! `s[k][depth+1] = 0` closing the truncated system. Row 0 never moves.
//!
//! Stationary points are computed by plain fixed-point iteration of the map
//! obtained by solving each drift entry for `s[k][i]`; the ODE integrator
//! gives an independent route to the same point.

use std::io::Write;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::graph::DegreeProfile;

/// Monotonicity/range slack accepted (and repaired) after an integration step.
pub const REPAIR_TOL: f64 = 1e-9;
/// Target for the truncation-depth heuristic: tail bound below this value.
pub const TRUNCATION_BOUND: f64 = 1e-12;
pub const MAX_DEPTH: usize = 32;

/// Tail probabilities per degree class, rows `i = 0..=depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    n_classes: usize,
    depth: usize,
    tails: Vec<f64>,
}

impl MeanFieldState {
    /// Every queue empty: `s[k][0] = 1`, everything else 0.
    pub fn empty(n_classes: usize, depth: usize) -> Self {
        Self::saturated_to(n_classes, depth, 0)
    }

    /// Every queue holds exactly `level` tasks (`s[k][i] = 1` for `i <= level`).
    pub fn saturated_to(n_classes: usize, depth: usize, level: usize) -> Self {
        let width = depth + 1;
        let mut tails = vec![0.0; n_classes * width];
        for c in 0..n_classes {
            for i in 0..=level.min(depth) {
                tails[c * width + i] = 1.0;
            }
        }
        Self {
            n_classes,
            depth,
            tails,
        }
    }

    /// Builds a state from per-class rows; each row has `depth + 1` entries
    /// and must start at 1 and be nonincreasing within `[0, 1]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(invalid("state needs at least one degree class"));
        };
        let width = first.len();
        if width == 0 {
            return Err(invalid("state rows must include i = 0"));
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(invalid("state rows have different lengths"));
        }
        let state = Self {
            n_classes: rows.len(),
            depth: width - 1,
            tails: rows.concat(),
        };
        state.validate(0.0)?;
        Ok(state)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    fn width(&self) -> usize {
        self.depth + 1
    }

    pub fn get(&self, class: usize, i: usize) -> f64 {
        if i > self.depth {
            0.0
        } else {
            self.tails[class * self.width() + i]
        }
    }

    /// Sets one entry without validation (row 0 included).
    pub fn set(&mut self, class: usize, i: usize, value: f64) {
        let w = self.width();
        self.tails[class * w + i] = value;
    }

    pub fn row(&self, class: usize) -> &[f64] {
        let w = self.width();
        &self.tails[class * w..(class + 1) * w]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.tails
    }

    /// Checks `s[k][0] = 1`, the `[0, 1]` range and nonincreasing tails, each
    /// up to `slack`.
    pub fn validate(&self, slack: f64) -> Result<()> {
        for c in 0..self.n_classes {
            let row = self.row(c);
            if row[0] != 1.0 {
                return Err(invalid(format!("class {c}: s[0] = {} != 1", row[0])));
            }
            for i in 1..row.len() {
                let v = row[i];
                if !v.is_finite() || v < -slack || v > 1.0 + slack {
                    return Err(invalid(format!("class {c}: s[{i}] = {v} outside [0, 1]")));
                }
                if v > row[i - 1] + slack {
                    return Err(invalid(format!("class {c}: tail increases at i = {i}")));
                }
            }
        }
        Ok(())
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.n_classes == other.n_classes && self.depth == other.depth
    }

    /// Coordinate-wise `self >= other - slack`.
    pub fn dominates(&self, other: &Self, slack: f64) -> bool {
        self.same_shape(other)
            && self
                .tails
                .iter()
                .zip(&other.tails)
                .all(|(a, b)| *a >= *b - slack)
    }

    /// Largest amount by which `other` exceeds `self` anywhere (0 if dominated).
    pub fn dominance_violation(&self, other: &Self) -> f64 {
        self.tails
            .iter()
            .zip(&other.tails)
            .map(|(a, b)| (b - a).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.tails
            .iter()
            .zip(&other.tails)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Entrywise max; stays a valid state when both inputs are.
    pub fn join(&self, other: &Self) -> Self {
        self.zip_with(other, f64::max)
    }

    /// Entrywise min; stays a valid state when both inputs are.
    pub fn meet(&self, other: &Self) -> Self {
        self.zip_with(other, f64::min)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert!(self.same_shape(other), "state shapes differ");
        Self {
            n_classes: self.n_classes,
            depth: self.depth,
            tails: self.tails.iter().zip(&other.tails).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// `s_i = sum_k p(k) s[k][i]` for every row.
    pub fn aggregate(&self, profile: &DegreeProfile) -> Vec<f64> {
        (0..=self.depth)
            .map(|i| (0..self.n_classes).map(|c| profile.pmf()[c] * self.get(c, i)).sum())
            .collect()
    }

    /// `s_(k),i = sum_k p(k) k s[k][i]` for every row.
    pub fn degree_weighted_aggregate(&self, profile: &DegreeProfile) -> Vec<f64> {
        (0..=self.depth)
            .map(|i| {
                (0..self.n_classes)
                    .map(|c| profile.pmf()[c] * profile.support()[c] as f64 * self.get(c, i))
                    .sum()
            })
            .collect()
    }

    /// Uniformly random valid state: each row is a descending sort of iid
    /// uniforms, optionally scaled down so deep rows are not all near 1.
    pub fn random<R: Rng + ?Sized>(n_classes: usize, depth: usize, rng: &mut R) -> Self {
        let mut state = Self::empty(n_classes, depth);
        let decay: f64 = rng.random_range(0.2..1.0);
        for c in 0..n_classes {
            let mut draws: Vec<f64> = (0..depth).map(|_| rng.random::<f64>()).collect();
            draws.sort_by(|a, b| b.total_cmp(a));
            let mut scale = 1.0;
            for (i, d) in draws.into_iter().enumerate() {
                scale *= decay;
                let prev = state.get(c, i);
                state.set(c, i + 1, (d * scale).min(prev));
            }
        }
        state
    }
}

/// Time derivative of a [`MeanFieldState`]; row 0 is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Drift {
    n_classes: usize,
    depth: usize,
    values: Vec<f64>,
}

impl Drift {
    pub fn get(&self, class: usize, i: usize) -> f64 {
        self.values[class * (self.depth + 1) + i]
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &Drift) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Samples of an integrated trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<MeanFieldState>,
}

impl Trajectory {
    pub fn last(&self) -> &MeanFieldState {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

/// Fixed-step integration settings.
#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Record every this many steps (the initial and final states are always
    /// recorded).
    pub sample_stride: usize,
}

impl IntegrateOptions {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            sample_stride: 1,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.sample_stride = stride.max(1);
        self
    }
}

/// Fixed-point solver settings.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Residual bound `||F(s*)||_inf`; iteration also requires successive
    /// iterates to move less than `tol / 10`.
    pub tol: f64,
    pub max_iter: usize,
    /// Integrate the ODE from the empty state and require agreement with the
    /// fixed point within `10 * tol`.
    pub cross_check: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
            cross_check: false,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn cross_checked(mut self) -> Self {
        self.cross_check = true;
        self
    }
}

/// The ODE system for one parameter point.
#[derive(Debug, Clone)]
pub struct MeanField {
    profile: DegreeProfile,
    lambda: f64,
    mu: f64,
    x_c: f64,
    depth: usize,
}

impl MeanField {
    /// Model with the default truncation depth for this load.
    pub fn new(profile: DegreeProfile, lambda: f64, mu: f64, x_c: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(invalid(format!("mu must be positive, got {mu}")));
        }
        if !(0.0..=1.0).contains(&x_c) {
            return Err(invalid(format!("x_c must lie in [0, 1], got {x_c}")));
        }
        let depth = default_depth(&profile, x_c * lambda / mu);
        Ok(Self {
            profile,
            lambda,
            mu,
            x_c,
            depth,
        })
    }

    /// Overrides the truncation depth (at least 1).
    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth.max(1);
        self
    }

    pub fn profile(&self) -> &DegreeProfile {
        &self.profile
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn x_c(&self) -> f64 {
        self.x_c
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Collaborative arrival rate `x_c * lambda`.
    pub fn load(&self) -> f64 {
        self.x_c * self.lambda
    }

    /// `(1 + delta1)/2 * x_c lambda / mu`; the model is treated as stable
    /// when this is below 1.
    pub fn stability_factor(&self) -> f64 {
        0.5 * (1.0 + self.profile.delta1()) * self.load() / self.mu
    }

    pub fn empty_state(&self) -> MeanFieldState {
        MeanFieldState::empty(self.profile.len(), self.depth)
    }

    fn check_shape(&self, state: &MeanFieldState) -> Result<()> {
        if state.n_classes() != self.profile.len() || state.depth() != self.depth {
            return Err(invalid(format!(
                "state shape {}x{} does not match model {}x{}",
                state.n_classes(),
                state.depth() + 1,
                self.profile.len(),
                self.depth + 1
            )));
        }
        Ok(())
    }

    /// Per-row sums needed by `z`: `sum p (s[i-1]+s[i])` and the same weighted
    /// by degree.
    fn neighbour_sums(&self, s: &[f64], i: usize) -> (f64, f64) {
        let w = self.depth + 1;
        let mut plain = 0.0;
        let mut weighted = 0.0;
        for (c, (&k, &p)) in self.profile.support().iter().zip(self.profile.pmf()).enumerate() {
            let pair = s[c * w + i - 1] + s[c * w + i];
            plain += p * pair;
            weighted += p * k as f64 * pair;
        }
        (plain, weighted)
    }

    fn drift_into(&self, s: &[f64], out: &mut [f64]) {
        let w = self.depth + 1;
        let kbar = self.profile.mean_degree();
        let a = self.load();
        for c in 0..self.profile.len() {
            out[c * w] = 0.0;
        }
        for i in 1..=self.depth {
            let (plain, weighted) = self.neighbour_sums(s, i);
            for (c, &k) in self.profile.support().iter().enumerate() {
                let z = 0.5 * (weighted + k as f64 * plain) / kbar;
                let here = s[c * w + i];
                let next = if i < self.depth { s[c * w + i + 1] } else { 0.0 };
                out[c * w + i] = -self.mu * (here - next) + a * (s[c * w + i - 1] - here) * z;
            }
        }
    }

    pub fn drift(&self, state: &MeanFieldState) -> Result<Drift> {
        self.check_shape(state)?;
        let mut values = vec![0.0; state.tails.len()];
        self.drift_into(&state.tails, &mut values);
        Ok(Drift {
            n_classes: state.n_classes,
            depth: state.depth,
            values,
        })
    }

    /// Classical RK4 with fixed step. After every step row 0 is reset to 1 and
    /// range/monotonicity violations up to [`REPAIR_TOL`] are clipped; larger
    /// ones abort with a numerical failure.
    pub fn integrate(&self, state0: &MeanFieldState, opts: IntegrateOptions) -> Result<Trajectory> {
        self.check_shape(state0)?;
        state0.validate(REPAIR_TOL)?;
        if !(opts.dt.is_finite() && opts.dt > 0.0) {
            return Err(invalid(format!("step must be positive, got {}", opts.dt)));
        }
        if !(opts.t_end.is_finite() && opts.t_end >= 0.0) {
            return Err(invalid(format!("t_end must be nonnegative, got {}", opts.t_end)));
        }
        let steps = (opts.t_end / opts.dt).round() as usize;
        let stride = opts.sample_stride.max(1);
        let n = state0.tails.len();
        let mut s = state0.tails.clone();
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut tmp = vec![0.0; n];
        let dt = opts.dt;

        let mut traj = Trajectory {
            times: vec![0.0],
            states: vec![state0.clone()],
        };
        for step in 1..=steps {
            self.drift_into(&s, &mut k1);
            axpy(&s, 0.5 * dt, &k1, &mut tmp);
            self.drift_into(&tmp, &mut k2);
            axpy(&s, 0.5 * dt, &k2, &mut tmp);
            self.drift_into(&tmp, &mut k3);
            axpy(&s, dt, &k3, &mut tmp);
            self.drift_into(&tmp, &mut k4);
            for j in 0..n {
                s[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            repair(&mut s, self.depth + 1, step as f64 * dt)?;
            if step % stride == 0 || step == steps {
                traj.times.push(step as f64 * dt);
                traj.states.push(MeanFieldState {
                    n_classes: state0.n_classes,
                    depth: state0.depth,
                    tails: s.clone(),
                });
            }
        }
        Ok(traj)
    }

    /// One sweep of the fixed-point map: every entry replaced by the value that
    /// zeroes its drift with the neighbouring entries held fixed.
    fn fixed_point_sweep(&self, s: &[f64], out: &mut [f64]) {
        let w = self.depth + 1;
        let kbar = self.profile.mean_degree();
        let a = self.load();
        for c in 0..self.profile.len() {
            out[c * w] = 1.0;
        }
        for i in 1..=self.depth {
            let (plain, weighted) = self.neighbour_sums(s, i);
            for (c, &k) in self.profile.support().iter().enumerate() {
                let z = 0.5 * (weighted + k as f64 * plain) / kbar;
                let next = if i < self.depth { s[c * w + i + 1] } else { 0.0 };
                out[c * w + i] = (a * s[c * w + i - 1] * z + self.mu * next) / (a * z + self.mu);
            }
        }
    }

    pub fn stationary_point(&self, opts: SolverOptions) -> Result<StationaryPoint> {
        self.stationary_point_from(None, opts)
    }

    /// Fixed-point iteration started from `initial` (the empty state if none).
    /// The map is monotone, so any valid starting state converges.
    pub fn stationary_point_from(
        &self,
        initial: Option<&MeanFieldState>,
        opts: SolverOptions,
    ) -> Result<StationaryPoint> {
        if !(opts.tol.is_finite() && opts.tol > 0.0) {
            return Err(invalid("solver tolerance must be positive"));
        }
        let factor = self.stability_factor();
        if factor >= 1.0 {
            return Err(Error::Infeasible(format!(
                "stability factor (1+delta1)/2 * x_c lambda / mu = {factor:.6} is not below 1"
            )));
        }
        let mut s = match initial {
            Some(init) => {
                self.check_shape(init)?;
                init.validate(REPAIR_TOL)?;
                init.tails.clone()
            }
            None => self.empty_state().tails,
        };
        let mut next = vec![0.0; s.len()];
        let mut drift = vec![0.0; s.len()];
        for iteration in 1..=opts.max_iter {
            self.fixed_point_sweep(&s, &mut next);
            let change = sup_diff(&s, &next);
            std::mem::swap(&mut s, &mut next);
            if change < opts.tol / 10.0 {
                self.drift_into(&s, &mut drift);
                let residual = drift.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
                if residual < opts.tol {
                    let state = MeanFieldState {
                        n_classes: self.profile.len(),
                        depth: self.depth,
                        tails: s,
                    };
                    let mut sp = StationaryPoint::new(self, state, residual, iteration);
                    if opts.cross_check {
                        sp.ode_agreement = Some(self.ode_cross_check(&sp, 10.0 * opts.tol)?);
                    }
                    return Ok(sp);
                }
            }
        }
        Err(Error::NumericalFailure(format!(
            "fixed-point iteration did not converge in {} iterations",
            opts.max_iter
        )))
    }

    /// Integrates from the empty state until the trajectory is within `bound`
    /// of the fixed point. The first horizon is `2 ln(1/bound)`; it is extended
    /// in chunks up to [`CROSS_CHECK_HORIZON`] time units. Returns the final
    /// sup distance.
    pub fn ode_cross_check(&self, sp: &StationaryPoint, bound: f64) -> Result<f64> {
        self.check_shape(&sp.state)?;
        let dt = DEFAULT_DT;
        let mut state = self.empty_state();
        let mut t = 0.0;
        let mut chunk = (2.0 * (1.0 / bound).ln()).max(1.0);
        loop {
            let traj = self.integrate(&state, IntegrateOptions::new(chunk, dt).stride(usize::MAX))?;
            t += chunk;
            state = traj.last().clone();
            let gap = state.sup_distance(&sp.state);
            if gap <= bound {
                return Ok(gap);
            }
            if t >= CROSS_CHECK_HORIZON {
                return Err(Error::NumericalFailure(format!(
                    "ODE trajectory still {gap:.3e} from the fixed point after t = {t}"
                )));
            }
            chunk = 50.0;
        }
    }

    /// `((1+delta)/2 * x_c lambda / mu)^(2^i - 1)` with `delta = delta2` for
    /// the lower and `delta1` for the upper bound.
    pub fn tail_bounds(&self, i: usize) -> Result<(f64, f64)> {
        let factor = self.stability_factor();
        if factor >= 1.0 {
            return Err(Error::Infeasible(format!(
                "tail bounds need a stability factor below 1, got {factor:.6}"
            )));
        }
        let exponent = 2f64.powi(i as i32) - 1.0;
        let rho = self.load() / self.mu;
        let lower = (0.5 * (1.0 + self.profile.delta2()) * rho).powf(exponent);
        let upper = factor.powf(exponent);
        Ok((lower, upper))
    }

    /// `3 x_c lambda (1 + k_max / kbar) + 2 mu`.
    pub fn lipschitz_constant(&self) -> f64 {
        3.0 * self.load() * (1.0 + self.profile.delta1()) + 2.0 * self.mu
    }

    /// Largest `||F(s) - F(s')|| / ||s - s'||` (sup norms) over `trials`
    /// random pairs. Half the pairs are independent states, half are small
    /// perturbations of each other; identical pairs are skipped.
    pub fn lipschitz_check<R: Rng + ?Sized>(&self, trials: usize, rng: &mut R) -> Result<f64> {
        if trials == 0 {
            return Err(invalid("need at least one trial"));
        }
        let (n, d) = (self.profile.len(), self.depth);
        let mut worst: f64 = 0.0;
        for t in 0..trials {
            let s = MeanFieldState::random(n, d, rng);
            let other = if t % 2 == 0 {
                MeanFieldState::random(n, d, rng)
            } else {
                perturb(&s, rng.random_range(1e-6..1e-2), rng)
            };
            let dist = s.sup_distance(&other);
            if dist == 0.0 {
                continue;
            }
            let ratio = self.drift(&s)?.sup_distance(&self.drift(&other)?) / dist;
            worst = worst.max(ratio);
        }
        Ok(worst)
    }
}

/// Default RK4 step.
pub const DEFAULT_DT: f64 = 0.01;
/// Longest ODE horizon tried by [`MeanField::ode_cross_check`].
pub const CROSS_CHECK_HORIZON: f64 = 5_000.0;

/// Smallest depth whose upper tail bound is below [`TRUNCATION_BOUND`],
/// clamped to `2..=MAX_DEPTH`.
pub fn default_depth(profile: &DegreeProfile, rho: f64) -> usize {
    let factor = 0.5 * (1.0 + profile.delta1()) * rho;
    if factor <= 0.0 {
        return 2;
    }
    if factor >= 1.0 {
        return MAX_DEPTH;
    }
    (2..=MAX_DEPTH)
        .find(|&i| factor.powf(2f64.powi(i as i32) - 1.0) < TRUNCATION_BOUND)
        .unwrap_or(MAX_DEPTH)
}

fn axpy(x: &[f64], a: f64, y: &[f64], out: &mut [f64]) {
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + a * yi;
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn repair(s: &mut [f64], width: usize, t: f64) -> Result<()> {
    for row in s.chunks_mut(width) {
        row[0] = 1.0;
        for i in 1..width {
            let v = row[i];
            if !v.is_finite() {
                return Err(Error::NumericalFailure(format!("non-finite state at t = {t}")));
            }
            let mut fixed = v;
            if fixed < 0.0 {
                if fixed < -REPAIR_TOL {
                    return Err(Error::NumericalFailure(format!("tail {v:e} below 0 at t = {t}")));
                }
                fixed = 0.0;
            }
            if fixed > row[i - 1] {
                if fixed - row[i - 1] > REPAIR_TOL {
                    return Err(Error::NumericalFailure(format!(
                        "tail increases by {:e} at i = {i}, t = {t}",
                        fixed - row[i - 1]
                    )));
                }
                fixed = row[i - 1];
            }
            row[i] = fixed;
        }
    }
    Ok(())
}

fn perturb<R: Rng + ?Sized>(s: &MeanFieldState, eps: f64, rng: &mut R) -> MeanFieldState {
    let mut out = s.clone();
    for c in 0..s.n_classes() {
        for i in 1..=s.depth() {
            let v = s.get(c, i) + eps * (rng.random::<f64>() - 0.5);
            let capped = v.clamp(0.0, out.get(c, i - 1));
            out.set(c, i, capped);
        }
    }
    out
}

/// Solved stationary point with its aggregates.
#[derive(Debug, Clone)]
pub struct StationaryPoint {
    pub state: MeanFieldState,
    pub profile: DegreeProfile,
    pub lambda: f64,
    pub mu: f64,
    pub x_c: f64,
    /// `s_i* = sum_k p(k) s*[k][i]`.
    pub aggregates: Vec<f64>,
    /// `s_(k),i* = sum_k p(k) k s*[k][i]`.
    pub weighted_aggregates: Vec<f64>,
    /// `s_1*`.
    pub busy: f64,
    /// `sum_{i>=1} s_i*`, the mean queue length.
    pub mean_workload: f64,
    pub residual: f64,
    pub iterations: usize,
    /// Sup distance between the ODE route and the fixed point, when checked.
    pub ode_agreement: Option<f64>,
}

impl StationaryPoint {
    fn new(model: &MeanField, state: MeanFieldState, residual: f64, iterations: usize) -> Self {
        let aggregates = state.aggregate(&model.profile);
        let weighted_aggregates = state.degree_weighted_aggregate(&model.profile);
        let busy = aggregates.get(1).copied().unwrap_or(0.0);
        let mean_workload = aggregates.iter().skip(1).sum();
        Self {
            state,
            profile: model.profile.clone(),
            lambda: model.lambda,
            mu: model.mu,
            x_c: model.x_c,
            aggregates,
            weighted_aggregates,
            busy,
            mean_workload,
            residual,
            iterations,
            ode_agreement: None,
        }
    }

    /// `s*[k][i]` looked up by degree value.
    pub fn tail(&self, degree: usize, i: usize) -> Option<f64> {
        self.profile.class_of(degree).map(|c| self.state.get(c, i))
    }

    /// Mean queue length of degree-`k` users, `sum_{i>=1} s*[k][i]`.
    pub fn class_workload(&self, degree: usize) -> Option<f64> {
        let c = self.profile.class_of(degree)?;
        Some(self.state.row(c).iter().skip(1).sum())
    }

    pub fn load(&self) -> f64 {
        self.x_c * self.lambda
    }

    /// CSV with columns `k,i,s_star`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,i,s_star")?;
        for (c, &k) in self.profile.support().iter().enumerate() {
            for (i, v) in self.state.row(c).iter().enumerate() {
                writeln!(out, "{k},{i},{v}")?;
            }
        }
        Ok(())
    }

    /// CSV with columns `i,s_i,s_k_i`.
    pub fn write_aggregates_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,s_i,s_k_i")?;
        for (i, (a, b)) in self.aggregates.iter().zip(&self.weighted_aggregates).enumerate() {
            writeln!(out, "{i},{a},{b}")?;
        }
        Ok(())
    }
}

/// `sum_k p(k) s*[k][1]`; equals `x_c lambda / mu` at a stationary point.
pub fn busy_probability(sp: &StationaryPoint) -> f64 {
    sp.state.aggregate(&sp.profile).get(1).copied().unwrap_or(0.0)
}

/// Largest `|s_i* - a/(kbar mu) s_{i-1}* s_(k),i-1*|` over `i >= 1`.
pub fn recursion_residual(sp: &StationaryPoint) -> f64 {
    let coef = sp.load() / (sp.profile.mean_degree() * sp.mu);
    let (s, sk) = (&sp.aggregates, &sp.weighted_aggregates);
    (1..s.len())
        .map(|i| (s[i] - coef * s[i - 1] * sk[i - 1]).abs())
        .fold(0.0, f64::max)
}

/// Largest amount by which a lower-degree class exceeds a higher-degree class
/// in the same row (0 when tails are monotone in degree).
pub fn degree_monotonicity_violation(sp: &StationaryPoint) -> f64 {
    let st = &sp.state;
    let mut worst: f64 = 0.0;
    for i in 0..=st.depth() {
        for hi in 1..st.n_classes() {
            for lo in 0..hi {
                worst = worst.max(st.get(lo, i) - st.get(hi, i));
            }
        }
    }
    worst
}

/// Largest excursion of any `s*[k][i]` outside its tail bounds.
pub fn tail_bound_violation(model: &MeanField, sp: &StationaryPoint) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..=sp.state.depth() {
        let (lo, hi) = model.tail_bounds(i)?;
        for c in 0..sp.state.n_classes() {
            let v = sp.state.get(c, i);
            worst = worst.max(lo - v).max(v - hi);
        }
    }
    Ok(worst)
}

/// Lyapunov distance `sum_i |sum_k p(k)(s[k][i] - s*[k][i])| / 2^i`.
pub fn lyapunov_phi(state: &MeanFieldState, sp: &StationaryPoint) -> Result<f64> {
    if !state.same_shape(&sp.state) {
        return Err(invalid("state and stationary point shapes differ"));
    }
    let pmf = sp.profile.pmf();
    let mut phi = 0.0;
    let mut weight = 1.0;
    for i in 0..=state.depth() {
        let diff: f64 = (0..state.n_classes())
            .map(|c| pmf[c] * (state.get(c, i) - sp.state.get(c, i)))
            .sum();
        phi += diff.abs() * weight;
        weight *= 0.5;
    }
    Ok(phi)
}

/// Randomised structural checks shared by the test suites and the harness.
pub mod checks {
    use super::*;

    /// Outcome of integrating ordered initial pairs side by side.
    #[derive(Debug, Clone, Copy)]
    pub struct DominanceReport {
        pub pairs: usize,
        /// Largest `s_hat(t) - s(t)` seen at any sample (<= 0 means preserved).
        pub worst_violation: f64,
    }

    /// Integrates `pairs` random ordered pairs `s(0) >= s_hat(0)` and records
    /// the worst reversal of the order along the way.
    pub fn dominance<R: Rng + ?Sized>(
        model: &MeanField,
        pairs: usize,
        t_end: f64,
        rng: &mut R,
    ) -> Result<DominanceReport> {
        let (n, d) = (model.profile().len(), model.depth());
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..pairs {
            let low = MeanFieldState::random(n, d, rng);
            let high = low.join(&MeanFieldState::random(n, d, rng));
            let opts = IntegrateOptions::new(t_end, DEFAULT_DT).stride(10);
            let upper = model.integrate(&high, opts)?;
            let lower = model.integrate(&low, opts)?;
            for (a, b) in upper.states.iter().zip(&lower.states) {
                let v = a
                    .as_slice()
                    .iter()
                    .zip(b.as_slice())
                    .map(|(x, y)| y - x)
                    .fold(f64::NEG_INFINITY, f64::max);
                worst = worst.max(v);
            }
        }
        Ok(DominanceReport {
            pairs,
            worst_violation: worst,
        })
    }

    /// Outcome of tracking the Lyapunov distance along trajectories.
    #[derive(Debug, Clone, Copy)]
    pub struct DecayReport {
        pub trajectories: usize,
        /// Largest `phi(t) / (phi(0) e^{-rate t})` over all samples; the decay
        /// bound holds when this is at most 1.
        pub worst_ratio: f64,
        /// Slowest empirical rate `ln(phi(0)/phi(t_end)) / t_end`.
        pub slowest_rate: f64,
    }

    /// Starts `trajectories` runs alternately above and below `sp` (join/meet
    /// with a random state) and compares `phi(t)` with `phi(0) e^{-rate t}`.
    pub fn lyapunov_decay<R: Rng + ?Sized>(
        model: &MeanField,
        sp: &StationaryPoint,
        trajectories: usize,
        rate: f64,
        t_end: f64,
        rng: &mut R,
    ) -> Result<DecayReport> {
        let (n, d) = (model.profile().len(), model.depth());
        let mut worst_ratio: f64 = 0.0;
        let mut slowest = f64::INFINITY;
        for j in 0..trajectories {
            let r = MeanFieldState::random(n, d, rng);
            let start = if j % 2 == 0 { sp.state.join(&r) } else { sp.state.meet(&r) };
            let phi0 = lyapunov_phi(&start, sp)?;
            if phi0 == 0.0 {
                continue;
            }
            let traj = model.integrate(&start, IntegrateOptions::new(t_end, DEFAULT_DT).stride(10))?;
            for (t, s) in traj.times.iter().zip(&traj.states) {
                let phi = lyapunov_phi(s, sp)?;
                worst_ratio = worst_ratio.max(phi / (phi0 * (-rate * t).exp()));
            }
            let phi_end = lyapunov_phi(traj.last(), sp)?;
            slowest = slowest.min((phi0 / phi_end).ln() / t_end);
        }
        Ok(DecayReport {
            trajectories,
            worst_ratio,
            slowest_rate: slowest,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    fn uniform() -> DegreeProfile {
        DegreeProfile::uniform(6, 9).unwrap()
    }

    /// Drift written from the unsimplified per-event transition rates, with
    /// queue-length probabilities q = s[i] - s[i+1] and p(k'|k) = k'p(k')/kbar.
    fn drift_from_transitions(model: &MeanField, s: &MeanFieldState) -> Vec<Vec<f64>> {
        let prof = model.profile();
        let kbar = prof.mean_degree();
        let a = model.load();
        let q = |c: usize, i: usize| s.get(c, i) - s.get(c, i + 1);
        let mut out = vec![vec![0.0; s.depth() + 1]; prof.len()];
        for (c, &k) in prof.support().iter().enumerate() {
            for i in 1..=s.depth() {
                let mut stay = 0.0;
                let mut recv = 0.0;
                for (cp, &kp) in prof.support().iter().enumerate() {
                    let cond = kp as f64 * prof.pmf()[cp] / kbar;
                    let term = s.get(cp, i) + 0.5 * q(cp, i - 1);
                    stay += cond * term;
                    recv += cond * term / kp as f64;
                }
                out[c][i] = -model.mu() * q(c, i) + a * q(c, i - 1) * stay + k as f64 * a * q(c, i - 1) * recv;
            }
        }
        out
    }

    #[test]
    fn drift_matches_transition_form() {
        let model = MeanField::new(uniform(), 0.9, 1.0, 0.8).unwrap().with_depth(8);
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            let s = MeanFieldState::random(4, 8, &mut rng);
            let fast = model.drift(&s).unwrap();
            let slow = drift_from_transitions(&model, &s);
            for c in 0..4 {
                for i in 0..=8 {
                    assert!((fast.get(c, i) - slow[c][i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn drift_of_empty_state() {
        let prof = uniform();
        let model = MeanField::new(prof.clone(), 1.0, 1.0, 0.7).unwrap().with_depth(6);
        let d = model.drift(&model.empty_state()).unwrap();
        for (c, &k) in prof.support().iter().enumerate() {
            let expected = 0.7 * (7.5 + k as f64) / 15.0;
            assert!((d.get(c, 1) - expected).abs() < 1e-14);
            assert_eq!(d.get(c, 0), 0.0);
            for i in 2..=6 {
                assert_eq!(d.get(c, i), 0.0);
            }
        }
    }

    #[test]
    fn homogeneous_drift_is_classical_po2() {
        let model = MeanField::new(DegreeProfile::homogeneous(4).unwrap(), 0.9, 1.0, 0.6).unwrap().with_depth(7);
        let s = MeanFieldState::random(1, 7, &mut rng_from_seed(2));
        let d = model.drift(&s).unwrap();
        for i in 1..=7 {
            let (prev, here, next) = (s.get(0, i - 1), s.get(0, i), s.get(0, i + 1));
            let classical = 0.54 * (prev * prev - here * here) - (here - next);
            assert!((d.get(0, i) - classical).abs() < 1e-13);
        }
    }

    #[test]
    fn drift_rejects_wrong_shape() {
        let model = MeanField::new(uniform(), 0.9, 1.0, 0.5).unwrap().with_depth(5);
        assert!(model.drift(&MeanFieldState::empty(3, 5)).is_err());
        assert!(model.drift(&MeanFieldState::empty(4, 6)).is_err());
    }

    #[test]
    fn zero_collaboration_means_empty_queues() {
        let model = MeanField::new(uniform(), 0.9, 1.0, 0.0).unwrap();
        let sp = model.stationary_point(SolverOptions::default()).unwrap();
        assert!(sp.state.as_slice().chunks(model.depth() + 1).all(|r| r[1..].iter().all(|&v| v == 0.0)));
        assert_eq!(busy_probability(&sp), 0.0);
    }

    #[test]
    fn unstable_load_is_infeasible() {
        // (1 + 9/6)/2 * 0.9 > 1 for the profile {3, 9}.
        let prof = DegreeProfile::new(vec![3, 9], vec![0.5, 0.5]).unwrap();
        let model = MeanField::new(prof, 0.9, 1.0, 1.0).unwrap();
        assert!(matches!(model.stationary_point(SolverOptions::default()), Err(Error::Infeasible(_))));
        assert!(matches!(model.tail_bounds(1), Err(Error::Infeasible(_))));
    }

    #[test]
    fn stationary_state_stays_put_under_integration() {
        let model = MeanField::new(uniform(), 1.0, 1.0, 0.7).unwrap().with_depth(16);
        let sp = model.stationary_point(SolverOptions::with_tol(1e-12)).unwrap();
        let traj = model.integrate(&sp.state, IntegrateOptions::new(10.0, 0.01)).unwrap();
        assert!(traj.last().sup_distance(&sp.state) < 1e-8);
    }

    #[test]
    fn heavy_start_relaxes_to_closed_form() {
        let model = MeanField::new(DegreeProfile::homogeneous(5).unwrap(), 0.7, 1.0, 1.0).unwrap().with_depth(12);
        let heavy = MeanFieldState::saturated_to(1, 12, 3);
        let traj = model.integrate(&heavy, IntegrateOptions::new(150.0, 0.01).stride(1000)).unwrap();
        let end = traj.last();
        for (i, want) in [(1, 0.7), (2, 0.343), (3, 0.7f64.powi(7))] {
            assert!((end.get(0, i) - want).abs() < 1e-6, "i={i}: {}", end.get(0, i));
        }
    }

    #[test]
    fn integrate_rejects_bad_step() {
        let model = MeanField::new(uniform(), 0.9, 1.0, 0.5).unwrap();
        let s = model.empty_state();
        assert!(model.integrate(&s, IntegrateOptions::new(1.0, 0.0)).is_err());
        assert!(model.integrate(&s, IntegrateOptions::new(1.0, f64::NAN)).is_err());
    }

    #[test]
    fn integrate_flags_blow_up() {
        let model = MeanField::new(uniform(), 0.9, 1.0, 1.0).unwrap().with_depth(6);
        let err = model.integrate(&model.empty_state(), IntegrateOptions::new(10.0, 5.0));
        assert!(matches!(err, Err(Error::NumericalFailure(_))));
    }

    #[test]
    fn tail_bounds_arithmetic() {
        let model = MeanField::new(uniform(), 1.0, 1.0, 0.7).unwrap();
        assert_eq!(model.tail_bounds(0).unwrap(), (1.0, 1.0));
        let (lo, hi) = model.tail_bounds(1).unwrap();
        assert!((lo - 0.63).abs() < 1e-12 && (hi - 0.77).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_constant_arithmetic() {
        let model = MeanField::new(uniform(), 1.0, 1.0, 0.7).unwrap();
        assert!((model.lipschitz_constant() - 6.62).abs() < 1e-12);
        let homo = MeanField::new(DegreeProfile::homogeneous(6).unwrap(), 1.0, 1.0, 0.7).unwrap();
        assert!((homo.lipschitz_constant() - (6.0 * 0.7 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn phi_is_linear_in_uniform_excess() {
        let model = MeanField::new(uniform(), 1.0, 1.0, 0.7).unwrap().with_depth(10);
        let sp = model.stationary_point(SolverOptions::default()).unwrap();
        assert_eq!(lyapunov_phi(&sp.state, &sp).unwrap(), 0.0);
        let eps = 1e-3;
        let mut bumped = sp.state.clone();
        for c in 0..4 {
            for i in 1..=10 {
                bumped.set(c, i, sp.state.get(c, i) + eps);
            }
        }
        let want: f64 = (1..=10).map(|i| eps / 2f64.powi(i)).sum();
        assert!((lyapunov_phi(&bumped, &sp).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn csv_exports() {
        let model = MeanField::new(uniform(), 1.0, 1.0, 0.5).unwrap().with_depth(3);
        let sp = model.stationary_point(SolverOptions::default()).unwrap();
        let mut buf = Vec::new();
        sp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,i,s_star\n6,0,1\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 4);
        let mut buf = Vec::new();
        sp.write_aggregates_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("i,s_i,s_k_i\n0,1,7.5\n"));
    }

    #[test]
    fn default_depth_tracks_load() {
        let p = uniform();
        assert_eq!(default_depth(&p, 0.0), 2);
        let heavy = default_depth(&p, 0.9);
        assert!((10..=16).contains(&heavy), "{heavy}");
        assert!(default_depth(&p, 0.3) < heavy);
    }
}
