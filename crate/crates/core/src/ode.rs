//! ODE systems, one-step solvers and the local-error estimator.
//!
//! The filtering engines integrate with explicit Euler and estimate each
//! step's local error as Euler minus Runge's method (the explicit
//! trapezoidal rule). A classical RK4 integrator with a much finer step
//! provides reference solutions for synthetic data and exact errors.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::error_prior::SigmaVector;

pub type StateVector = DVector<f64>;
pub type ParamVector = DVector<f64>;

/// Relative tolerance on `k * h == t_{i+1} - t_i`.
pub const GRID_TOLERANCE: f64 = 1e-9;

/// Default ratio between the Euler step and the reference RK4 step.
pub const REFERENCE_REFINEMENT: usize = 100;

/// An autonomous system `dx/dt = f(x, theta)`.
pub trait OdeSystem: Send + Sync {
    fn name(&self) -> &str;

    /// State dimension `d_X`.
    fn dimension(&self) -> usize;

    /// Parameter dimension `d`.
    fn param_dimension(&self) -> usize;

    /// Names of the parameters, in order.
    fn param_names(&self) -> Vec<String> {
        (0..self.param_dimension()).map(|i| format!("theta{}", i + 1)).collect()
    }

    /// Reject parameter values for which the field is undefined.
    fn validate_params(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.param_dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dimension(),
                found: theta.len(),
            });
        }
        Ok(())
    }

    fn vector_field(&self, x: &StateVector, theta: &ParamVector) -> Result<StateVector>;
}

impl<T: OdeSystem + ?Sized> OdeSystem for std::sync::Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn param_dimension(&self) -> usize {
        (**self).param_dimension()
    }
    fn param_names(&self) -> Vec<String> {
        (**self).param_names()
    }
    fn validate_params(&self, theta: &ParamVector) -> Result<()> {
        (**self).validate_params(theta)
    }
    fn vector_field(&self, x: &StateVector, theta: &ParamVector) -> Result<StateVector> {
        (**self).vector_field(x, theta)
    }
}

fn check_finite(v: &StateVector) -> Result<()> {
    match v.iter().position(|c| !c.is_finite()) {
        Some(component) => Err(Error::Integration {
            time: None,
            step: None,
            component,
        }),
        None => Ok(()),
    }
}

fn eval(sys: &dyn OdeSystem, x: &StateVector, theta: &ParamVector) -> Result<StateVector> {
    if x.len() != sys.dimension() {
        return Err(Error::DimensionMismatch {
            expected: sys.dimension(),
            found: x.len(),
        });
    }
    let f = sys.vector_field(x, theta)?;
    if f.len() != sys.dimension() {
        return Err(Error::DimensionMismatch {
            expected: sys.dimension(),
            found: f.len(),
        });
    }
    check_finite(&f)?;
    Ok(f)
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("step size must be positive, got {h}")))
    }
}

/// Explicit Euler: `x + h f(x)`.
pub fn euler_step(x: &StateVector, theta: &ParamVector, h: f64, sys: &dyn OdeSystem) -> Result<StateVector> {
    check_step(h)?;
    let f = eval(sys, x, theta)?;
    let next = x + f * h;
    check_finite(&next)?;
    Ok(next)
}

/// Runge's method (explicit trapezoidal / Heun).
pub fn runge_step(x: &StateVector, theta: &ParamVector, h: f64, sys: &dyn OdeSystem) -> Result<StateVector> {
    check_step(h)?;
    let f0 = eval(sys, x, theta)?;
    let predictor = x + &f0 * h;
    check_finite(&predictor)?;
    let f1 = eval(sys, &predictor, theta)?;
    let next = x + (f0 + f1) * (0.5 * h);
    check_finite(&next)?;
    Ok(next)
}

/// Local-error estimate of one Euler step.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalErrorEstimate {
    /// Euler minus Runge.
    pub value: StateVector,
    pub componentwise_abs: SigmaVector,
}

impl LocalErrorEstimate {
    fn from_value(value: StateVector) -> Self {
        let componentwise_abs = SigmaVector::from_iter(value.iter().map(|v| v.abs()));
        Self {
            value,
            componentwise_abs,
        }
    }
}

/// Euler step together with the Euler-minus-Runge estimate, sharing `f(x)`.
fn euler_with_estimate(
    x: &StateVector,
    theta: &ParamVector,
    h: f64,
    sys: &dyn OdeSystem,
) -> Result<(StateVector, LocalErrorEstimate)> {
    let f0 = eval(sys, x, theta)?;
    let euler = x + &f0 * h;
    check_finite(&euler)?;
    let f1 = eval(sys, &euler, theta)?;
    let heun = x + (&f0 + f1) * (0.5 * h);
    check_finite(&heun)?;
    let value = &euler - heun;
    Ok((euler, LocalErrorEstimate::from_value(value)))
}

pub fn estimate_local_error(
    x: &StateVector,
    theta: &ParamVector,
    h: f64,
    sys: &dyn OdeSystem,
) -> Result<LocalErrorEstimate> {
    let euler = euler_step(x, theta, h, sys)?;
    let runge = runge_step(x, theta, h, sys)?;
    Ok(LocalErrorEstimate::from_value(euler - runge))
}

/// Fine solver grid between observation nodes: `t_{i+1} - t_i = k h`.
///
/// Node 0 is the initial time of the ODE. Observations live on a subset of
/// the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverGrid {
    h: f64,
    k: usize,
    times: Vec<f64>,
}

impl SolverGrid {
    pub fn new(h: f64, times: Vec<f64>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("step size must be positive, got {h}")));
        }
        if times.len() < 2 {
            return Err(Error::InvalidGrid("need at least two grid nodes".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("grid times must be finite".into()));
        }
        let interval = times[1] - times[0];
        if interval <= 0.0 {
            return Err(Error::InvalidGrid("grid times must be strictly increasing".into()));
        }
        let k = (interval / h).round();
        if k < 1.0 || (k * h - interval).abs() > GRID_TOLERANCE * interval {
            return Err(Error::InvalidGrid(format!(
                "interval {interval} is not an integer multiple of step size {h}"
            )));
        }
        for (i, w) in times.windows(2).enumerate() {
            let d = w[1] - w[0];
            if d <= 0.0 {
                return Err(Error::InvalidGrid("grid times must be strictly increasing".into()));
            }
            if (d - interval).abs() > GRID_TOLERANCE * interval.max(w[1].abs()) {
                return Err(Error::InvalidGrid(format!(
                    "interval {i} has length {d}, expected {interval}"
                )));
            }
        }
        Ok(Self {
            h,
            k: k as usize,
            times,
        })
    }

    /// Nodes `start, start + interval, ...` (`n_intervals + 1` of them).
    pub fn uniform(start: f64, interval: f64, n_intervals: usize, h: f64) -> Result<Self> {
        let times = (0..=n_intervals).map(|i| start + i as f64 * interval).collect();
        Self::new(h, times)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn steps_per_interval(&self) -> usize {
        self.k
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    /// `t_{i,j} = t_i + j h`.
    pub fn fine_time(&self, i: usize, j: usize) -> f64 {
        self.times[i] + j as f64 * self.h
    }

    /// Index of the node at time `t`, if any.
    pub fn node_of(&self, t: f64) -> Option<usize> {
        let interval = self.times[1] - self.times[0];
        let pos = (t - self.times[0]) / interval;
        let i = pos.round();
        if i < 0.0 || i as usize >= self.times.len() {
            return None;
        }
        let i = i as usize;
        let tol = GRID_TOLERANCE * interval.max(t.abs()).max(1.0);
        ((self.times[i] - t).abs() <= tol).then_some(i)
    }
}

/// Advance `k` Euler steps over interval `i`, returning the end state and
/// the local-error estimate at each pre-step state.
pub fn integrate_interval(
    x: &StateVector,
    theta: &ParamVector,
    grid: &SolverGrid,
    i: usize,
    sys: &dyn OdeSystem,
) -> Result<(StateVector, Vec<LocalErrorEstimate>)> {
    if i >= grid.n_intervals() {
        return Err(Error::InvalidGrid(format!(
            "interval index {i} out of range (grid has {} intervals)",
            grid.n_intervals()
        )));
    }
    let k = grid.steps_per_interval();
    let h = grid.h();
    let mut state = x.clone();
    let mut estimates = Vec::with_capacity(k);
    for j in 0..k {
        let (next, est) =
            euler_with_estimate(&state, theta, h, sys).map_err(|e| e.at(grid.fine_time(i, j), i * k + j))?;
        estimates.push(est);
        state = next;
    }
    Ok((state, estimates))
}

/// Euler solution at every grid node, starting from `x0` at node 0.
pub fn euler_trajectory(
    x0: &StateVector,
    theta: &ParamVector,
    grid: &SolverGrid,
    sys: &dyn OdeSystem,
) -> Result<Vec<StateVector>> {
    let mut out = Vec::with_capacity(grid.times().len());
    out.push(x0.clone());
    for i in 0..grid.n_intervals() {
        let (next, _) = integrate_interval(&out[i], theta, grid, i, sys)?;
        out.push(next);
    }
    Ok(out)
}

fn rk4_step(x: &StateVector, theta: &ParamVector, h: f64, sys: &dyn OdeSystem) -> Result<StateVector> {
    let k1 = eval(sys, x, theta)?;
    let k2 = eval(sys, &(x + &k1 * (0.5 * h)), theta)?;
    let k3 = eval(sys, &(x + &k2 * (0.5 * h)), theta)?;
    let k4 = eval(sys, &(x + &k3 * h), theta)?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    check_finite(&next)?;
    Ok(next)
}

/// Classical RK4 with internal step `h_ref`, sampled at `times`.
///
/// The step is shortened where needed so every requested time is hit
/// exactly.
pub fn reference_solution(
    x0: &StateVector,
    t0: f64,
    theta: &ParamVector,
    times: &[f64],
    h_ref: f64,
    sys: &dyn OdeSystem,
) -> Result<Vec<StateVector>> {
    check_step(h_ref)?;
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("reference times must be sorted".into()));
    }
    if let Some(&first) = times.first() {
        if first < t0 {
            return Err(Error::InvalidParameter(format!(
                "reference time {first} precedes initial time {t0}"
            )));
        }
    }
    let mut out = Vec::with_capacity(times.len());
    let mut x = x0.clone();
    let mut t = t0;
    let mut step = 0usize;
    for &target in times {
        let span = target - t;
        if span > 0.0 {
            let n = (span / h_ref - 1e-9).ceil().max(1.0) as usize;
            let dt = span / n as f64;
            for _ in 0..n {
                x = rk4_step(&x, theta, dt, sys).map_err(|e| e.at(t, step))?;
                t += dt;
                step += 1;
            }
            t = target;
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Shorthand for building an [`OdeSystem`] from a closure.
pub struct FnSystem<F> {
    name: String,
    dimension: usize,
    param_dimension: usize,
    field: F,
}

impl<F> FnSystem<F>
where
    F: Fn(&StateVector, &ParamVector) -> StateVector + Send + Sync,
{
    pub fn new(name: impl Into<String>, dimension: usize, param_dimension: usize, field: F) -> Self {
        Self {
            name: name.into(),
            dimension,
            param_dimension,
            field,
        }
    }
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(&StateVector, &ParamVector) -> StateVector + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn param_dimension(&self) -> usize {
        self.param_dimension
    }
    fn vector_field(&self, x: &StateVector, theta: &ParamVector) -> Result<StateVector> {
        Ok((self.field)(x, theta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PendulumSystem;
    use approx::assert_abs_diff_eq;

    fn zero_field(dim: usize) -> impl OdeSystem {
        FnSystem::new("zero", dim, 0, move |_x: &StateVector, _t: &ParamVector| {
            StateVector::zeros(dim)
        })
    }

    fn growth() -> impl OdeSystem {
        FnSystem::new("growth", 1, 0, |x: &StateVector, _t: &ParamVector| x.clone())
    }

    fn constant(c: f64) -> impl OdeSystem {
        FnSystem::new("const", 2, 0, move |_x: &StateVector, _t: &ParamVector| {
            StateVector::from_vec(vec![c, -2.0 * c])
        })
    }

    fn no_params() -> ParamVector {
        ParamVector::zeros(0)
    }

    fn v(xs: &[f64]) -> StateVector {
        StateVector::from_column_slice(xs)
    }

    #[test]
    fn euler_examples() {
        let x = euler_step(&v(&[1.0, 2.0]), &no_params(), 0.05, &zero_field(2)).unwrap();
        assert_eq!(x, v(&[1.0, 2.0]));

        let p = PendulumSystem::default();
        let x = euler_step(&v(&[1.0, 0.0]), &v(&[3.0]), 0.05, &p).unwrap();
        assert_eq!(x[0], 1.0);
        let expected = -(9.81 / 3.0) * 1f64.sin() * 0.05;
        assert_abs_diff_eq!(x[1], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], -0.137580506, epsilon = 1e-9);

        let x = euler_step(&v(&[1.0]), &no_params(), 0.1, &growth()).unwrap();
        assert_abs_diff_eq!(x[0], 1.1, epsilon = 1e-15);
    }

    #[test]
    fn runge_examples() {
        let x = runge_step(&v(&[3.0]), &no_params(), 0.1, &zero_field(1)).unwrap();
        assert_eq!(x, v(&[3.0]));

        let x = runge_step(&v(&[1.0]), &no_params(), 0.1, &growth()).unwrap();
        assert_abs_diff_eq!(x[0], 1.105, epsilon = 1e-15);

        let sys = constant(0.7);
        let x0 = v(&[0.3, -1.0]);
        let r = runge_step(&x0, &no_params(), 0.25, &sys).unwrap();
        let e = euler_step(&x0, &no_params(), 0.25, &sys).unwrap();
        assert_eq!(r, e);
    }

    #[test]
    fn step_rejects_nonpositive_h() {
        assert!(matches!(
            euler_step(&v(&[1.0]), &no_params(), 0.0, &growth()),
            Err(Error::InvalidParameter(_))
        ));
        assert!(runge_step(&v(&[1.0]), &no_params(), -0.1, &growth()).is_err());
    }

    #[test]
    fn non_finite_field_is_integration_failure() {
        let sys = FnSystem::new("blowup", 2, 0, |_x: &StateVector, _t: &ParamVector| {
            StateVector::from_vec(vec![0.0, f64::NAN])
        });
        let err = euler_step(&v(&[1.0, 1.0]), &no_params(), 0.1, &sys).unwrap_err();
        assert_eq!(
            err,
            Error::Integration {
                time: None,
                step: None,
                component: 1
            }
        );
        let grid = SolverGrid::uniform(0.0, 1.0, 2, 0.5).unwrap();
        let err = integrate_interval(&v(&[1.0, 1.0]), &no_params(), &grid, 1, &sys).unwrap_err();
        assert_eq!(
            err,
            Error::Integration {
                time: Some(1.0),
                step: Some(2),
                component: 1
            }
        );
    }

    #[test]
    fn local_error_examples() {
        let est = estimate_local_error(&v(&[1.0, 2.0]), &no_params(), 0.1, &zero_field(2)).unwrap();
        assert_eq!(est.value, v(&[0.0, 0.0]));
        assert_eq!(est.componentwise_abs.as_slice(), &[0.0, 0.0]);

        let est = estimate_local_error(&v(&[1.0]), &no_params(), 0.1, &growth()).unwrap();
        assert_abs_diff_eq!(est.value[0], -0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(est.componentwise_abs[0], 0.005, epsilon = 1e-15);

        let est = estimate_local_error(&v(&[5.0, 1.0]), &no_params(), 0.3, &constant(2.0)).unwrap();
        assert_eq!(est.componentwise_abs.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn local_error_is_euler_minus_runge() {
        let p = PendulumSystem::default();
        let theta = v(&[2.5]);
        for &(a, b) in &[(0.3, -0.2), (1.4, 0.9), (-2.0, 3.0)] {
            let x = v(&[a, b]);
            let est = estimate_local_error(&x, &theta, 0.05, &p).unwrap();
            let diff = euler_step(&x, &theta, 0.05, &p).unwrap() - runge_step(&x, &theta, 0.05, &p).unwrap();
            assert_eq!(est.value, diff);
            // the fused path used by integrate_interval agrees too
            let (_, fused) = euler_with_estimate(&x, &theta, 0.05, &p).unwrap();
            assert_abs_diff_eq!(fused.value, diff, epsilon = 1e-16);
        }
    }

    #[test]
    fn grid_validation() {
        let g = SolverGrid::uniform(0.0, 1.0, 40, 0.05).unwrap();
        assert_eq!(g.steps_per_interval(), 20);
        assert_eq!(g.n_intervals(), 40);
        assert_eq!(g.node_of(1.0), Some(1));
        assert_eq!(g.node_of(40.0), Some(40));
        assert_eq!(g.node_of(0.5), None);
        assert_eq!(g.node_of(41.0), None);
        let g = SolverGrid::uniform(10.0, 1.0, 90, 0.2).unwrap();
        assert_eq!(g.steps_per_interval(), 5);

        assert!(matches!(
            SolverGrid::uniform(0.0, 1.0, 3, 0.3),
            Err(Error::InvalidGrid(_))
        ));
        assert!(SolverGrid::new(0.1, vec![0.0, 1.0, 1.5]).is_err());
        assert!(SolverGrid::new(0.1, vec![1.0, 0.0]).is_err());
        assert!(SolverGrid::new(0.0, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn integrate_interval_examples() {
        let grid = SolverGrid::uniform(0.0, 0.1, 1, 0.1).unwrap();
        let x0 = v(&[1.0]);
        let (x, est) = integrate_interval(&x0, &no_params(), &grid, 0, &growth()).unwrap();
        assert_eq!(x, euler_step(&x0, &no_params(), 0.1, &growth()).unwrap());
        assert_eq!(est.len(), 1);
        assert_eq!(est[0], estimate_local_error(&x0, &no_params(), 0.1, &growth()).unwrap());

        let grid = SolverGrid::uniform(0.0, 0.2, 3, 0.1).unwrap();
        let (x, est) = integrate_interval(&x0, &no_params(), &grid, 1, &growth()).unwrap();
        assert_abs_diff_eq!(x[0], 1.21, epsilon = 1e-14);
        assert_abs_diff_eq!(est[0].componentwise_abs[0], 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(est[1].componentwise_abs[0], 0.0055, epsilon = 1e-15);

        let grid = SolverGrid::uniform(0.0, 1.0, 2, 0.125).unwrap();
        let (x, est) = integrate_interval(&v(&[4.0, -1.0]), &no_params(), &grid, 0, &zero_field(2)).unwrap();
        assert_eq!(x, v(&[4.0, -1.0]));
        assert!(est.iter().all(|e| e.componentwise_abs.as_slice() == [0.0, 0.0]));

        assert!(integrate_interval(&x0, &no_params(), &grid, 2, &growth()).is_err());
    }

    #[test]
    fn stepping_composes() {
        // k = 6 steps over one interval == two intervals of 3 steps
        let p = PendulumSystem::default();
        let theta = v(&[3.0]);
        let x0 = v(&[1.0, 0.0]);
        let coarse = SolverGrid::uniform(0.0, 0.3, 1, 0.05).unwrap();
        let fine = SolverGrid::uniform(0.0, 0.15, 2, 0.05).unwrap();
        let (a, est_a) = integrate_interval(&x0, &theta, &coarse, 0, &p).unwrap();
        let (m, est_1) = integrate_interval(&x0, &theta, &fine, 0, &p).unwrap();
        let (b, est_2) = integrate_interval(&m, &theta, &fine, 1, &p).unwrap();
        assert_eq!(a, b);
        let joined: Vec<_> = est_1.into_iter().chain(est_2).collect();
        assert_eq!(est_a, joined);
    }

    #[test]
    fn reference_examples() {
        let xs = reference_solution(
            &v(&[1.0, -2.0]),
            0.0,
            &no_params(),
            &[0.0, 1.0, 3.5],
            0.01,
            &zero_field(2),
        )
        .unwrap();
        assert!(xs.iter().all(|x| *x == v(&[1.0, -2.0])));

        let xs = reference_solution(&v(&[1.0]), 0.0, &no_params(), &[1.0], 1e-3, &growth()).unwrap();
        assert_abs_diff_eq!(xs[0][0], std::f64::consts::E, epsilon = 1e-8);

        // small-angle pendulum ~ harmonic oscillator
        let p = PendulumSystem::default();
        let l = 2.0;
        let omega = (9.81f64 / l).sqrt();
        let amp = 0.01;
        let times: Vec<f64> = (1..=20).map(|i| i as f64 * 0.5).collect();
        let xs = reference_solution(&v(&[amp, 0.0]), 0.0, &v(&[l]), &times, 5e-4, &p).unwrap();
        for (t, x) in times.iter().zip(&xs) {
            assert_abs_diff_eq!(x[0], amp * (omega * t).cos(), epsilon = 1e-3 * amp.max(1e-3));
            assert_abs_diff_eq!(x[1], -amp * omega * (omega * t).sin(), epsilon = 1e-3);
        }
    }

    #[test]
    fn reference_rejects_bad_times() {
        assert!(reference_solution(&v(&[1.0]), 1.0, &no_params(), &[0.5], 0.01, &growth()).is_err());
        assert!(reference_solution(&v(&[1.0]), 0.0, &no_params(), &[2.0, 1.0], 0.01, &growth()).is_err());
    }

    fn slope(hs: &[f64], errs: &[f64]) -> f64 {
        crate::stats::loglog_slope(hs, errs).unwrap()
    }

    #[test]
    fn convergence_orders() {
        // x' = -x + sin(t) rewritten autonomously: (x, t)' = (-x + sin t, 1)
        let sys = FnSystem::new("forced", 2, 0, |x: &StateVector, _t: &ParamVector| {
            StateVector::from_vec(vec![-x[0] + x[1].sin(), 1.0])
        });
        let exact = |t: f64| {
            // x(0) = 1
            let c = 1.0 + 0.5;
            c * (-t).exp() + 0.5 * (t.sin() - t.cos())
        };
        let hs = [0.1f64, 0.05, 0.025, 0.0125];
        let mut e_euler = Vec::new();
        let mut e_runge = Vec::new();
        for &h in &hs {
            let n = (1.0 / h).round() as usize;
            let mut xe = v(&[1.0, 0.0]);
            let mut xr = xe.clone();
            let (mut me, mut mr) = (0.0f64, 0.0f64);
            for i in 1..=n {
                xe = euler_step(&xe, &no_params(), h, &sys).unwrap();
                xr = runge_step(&xr, &no_params(), h, &sys).unwrap();
                let t = i as f64 * h;
                me = me.max((xe[0] - exact(t)).abs());
                mr = mr.max((xr[0] - exact(t)).abs());
            }
            e_euler.push(me);
            e_runge.push(mr);
        }
        let se = slope(&hs, &e_euler);
        let sr = slope(&hs, &e_runge);
        assert!((se - 1.0).abs() <= 0.15, "euler slope {se}");
        assert!((sr - 2.0).abs() <= 0.15, "runge slope {sr}");
    }
}
