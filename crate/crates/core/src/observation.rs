//! Gaussian observation model with discretization-error-inflated covariance
//! and synthetic data generation.

use std::io::{BufRead, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::error_prior::SigmaVector;
use crate::ode::{euler_trajectory, reference_solution, OdeSystem, ParamVector, SolverGrid, StateVector};
use crate::stats::{format_sig9, parse_float};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `y = H x + eps`, `eps ~ N(0, Gamma)`.
#[derive(Debug, Clone)]
pub struct ObservationOperator {
    h: DMatrix<f64>,
    gamma: DMatrix<f64>,
    gamma_chol: DMatrix<f64>,
}

impl ObservationOperator {
    pub fn new(h: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        let dy = h.nrows();
        if dy == 0 || h.ncols() == 0 {
            return Err(Error::InvalidParameter("observation matrix H must be nonempty".into()));
        }
        if gamma.nrows() != dy || gamma.ncols() != dy {
            return Err(Error::DimensionMismatch {
                expected: dy,
                found: gamma.nrows(),
            });
        }
        if h.iter().chain(gamma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("H and Gamma must be finite".into()));
        }
        if h.rank(1e-12) < dy.min(h.ncols()) {
            return Err(Error::InvalidParameter(
                "observation matrix H must have full rank".into(),
            ));
        }
        if (&gamma - gamma.transpose()).amax() > 1e-12 * gamma.amax().max(1.0) {
            return Err(Error::InvalidParameter(
                "noise covariance Gamma must be symmetric".into(),
            ));
        }
        let gamma_chol = Cholesky::new(gamma.clone())
            .ok_or_else(|| Error::InvalidParameter("noise covariance Gamma must be positive definite".into()))?
            .l();
        Ok(Self { h, gamma, gamma_chol })
    }

    /// `H = diag(h)`, `Gamma = diag(gamma)`.
    pub fn diagonal(h: &[f64], gamma: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(h)),
            DMatrix::from_diagonal(&DVector::from_column_slice(gamma)),
        )
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn obs_dimension(&self) -> usize {
        self.h.nrows()
    }

    pub fn state_dimension(&self) -> usize {
        self.h.ncols()
    }

    pub fn mean(&self, x: &StateVector) -> DVector<f64> {
        &self.h * x
    }
}

/// `Gamma + H diag(sigma^2) H^T`.
pub fn effective_covariance(sigma: &SigmaVector, op: &ObservationOperator) -> DMatrix<f64> {
    let dx = op.state_dimension();
    let dy = op.obs_dimension();
    let mut cov = op.gamma.clone();
    for r in 0..dy {
        for c in 0..=r {
            let mut acc = 0.0;
            for j in 0..dx {
                acc += op.h[(r, j)] * sigma[j] * sigma[j] * op.h[(c, j)];
            }
            cov[(r, c)] += acc;
            if r != c {
                cov[(c, r)] += acc;
            }
        }
    }
    cov
}

/// Log density of `y ~ N(H x_num, Gamma + H diag(sigma^2) H^T)`.
pub fn log_likelihood(
    y: &DVector<f64>,
    x_num: &StateVector,
    sigma: &SigmaVector,
    op: &ObservationOperator,
) -> Result<f64> {
    if y.len() != op.obs_dimension() {
        return Err(Error::DimensionMismatch {
            expected: op.obs_dimension(),
            found: y.len(),
        });
    }
    if x_num.len() != op.state_dimension() {
        return Err(Error::DimensionMismatch {
            expected: op.state_dimension(),
            found: x_num.len(),
        });
    }
    if sigma.len() != op.state_dimension() {
        return Err(Error::DimensionMismatch {
            expected: op.state_dimension(),
            found: sigma.len(),
        });
    }
    let cov = effective_covariance(sigma, op);
    let chol: Cholesky<f64, Dyn> = Cholesky::new(cov.clone()).ok_or_else(|| {
        let diag: Vec<f64> = cov.diagonal().iter().copied().collect();
        Error::Model(format!(
            "effective covariance is not positive definite (diagonal {diag:?})"
        ))
    })?;
    let residual = y - &op.h * x_num;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&residual)
        .ok_or_else(|| Error::Model("singular Cholesky factor".into()))?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let dy = y.len() as f64;
    Ok(-0.5 * (dy * LN_2PI + log_det + z.norm_squared()))
}

/// Observations `y*_{t_i}` at increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl ObservationSet {
    pub fn new(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                found: values.len(),
            });
        }
        if times.is_empty() {
            return Err(Error::InvalidParameter("observation set is empty".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "observation times must be strictly increasing".into(),
            ));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidParameter("observations must share one dimension".into()));
        }
        if values
            .iter()
            .flat_map(|v| v.iter())
            .chain(&times)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter("observations must be finite".into()));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.values[0].len()
    }

    /// For each grid node, the index of the observation made there.
    pub fn node_map(&self, grid: &SolverGrid) -> Result<Vec<Option<usize>>> {
        let mut map = vec![None; grid.times().len()];
        for (o, &t) in self.times.iter().enumerate() {
            let node = grid
                .node_of(t)
                .ok_or_else(|| Error::InvalidGrid(format!("observation time {t} is not a node of the solver grid")))?;
            map[node] = Some(o);
        }
        Ok(map)
    }

    /// CSV with header `t,y1,...,yd`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.dimension()).map(|i| format!("y{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, y) in self.times.iter().zip(&self.values) {
            let row: Vec<String> = std::iter::once(format_sig9(*t))
                .chain(y.iter().map(|v| format_sig9(*v)))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty observation file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(Error::Parse(format!("bad observation header {header:?}")));
        }
        for (i, c) in cols.iter().enumerate().skip(1) {
            if *c != format!("y{i}") {
                return Err(Error::Parse(format!("bad observation column {c:?}")));
            }
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse(format!("line {}: expected {} fields", ln + 2, cols.len())));
            }
            times.push(parse_float(fields[0])?);
            let y: Result<Vec<f64>> = fields[1..].iter().map(|f| parse_float(f)).collect();
            values.push(DVector::from_vec(y?));
        }
        Self::new(times, values)
    }
}

/// `y*_{t} = H x_ref(t) + eps`, with `x_ref` from the reference integrator.
#[allow(clippy::too_many_arguments)]
pub fn generate_observations<R: Rng + ?Sized>(
    x0: &StateVector,
    t0: f64,
    theta: &ParamVector,
    op: &ObservationOperator,
    times: &[f64],
    h_ref: f64,
    sys: &dyn OdeSystem,
    rng: &mut R,
) -> Result<ObservationSet> {
    let reference = reference_solution(x0, t0, theta, times, h_ref, sys)?;
    let dy = op.obs_dimension();
    let values = reference
        .iter()
        .map(|x| {
            let z = DVector::from_fn(dy, |_, _| rng.sample::<f64, _>(StandardNormal));
            op.mean(x) + &op.gamma_chol * z
        })
        .collect();
    ObservationSet::new(times.to_vec(), values)
}

/// `r_{t_i} = x_ref(t_i) - x_{t_i}` at every grid node, Euler on `grid`.
pub fn exact_errors(
    theta: &ParamVector,
    x0: &StateVector,
    grid: &SolverGrid,
    h_ref: f64,
    sys: &dyn OdeSystem,
) -> Result<Vec<StateVector>> {
    let euler = euler_trajectory(x0, theta, grid, sys)?;
    let reference = reference_solution(x0, grid.start(), theta, grid.times(), h_ref, sys)?;
    Ok(reference.iter().zip(&euler).map(|(r, e)| r - e).collect())
}
