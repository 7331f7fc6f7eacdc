//! Stage costs, their second-order expansions, and convexification.
//!
//! Every library cost is a [`WeightedCost`]: a positively weighted sum of
//! [`CostTerm`]s, each of which supplies its own analytic gradient and
//! Hessian. Mixed state/control partials are not represented; no library
//! term has them.

mod library;
mod terms;

pub use library::{
    driving_cost, nonlq_shepherd_cost, shepherd_cost, sheep_cost, DrivingCostParams, DrivingWeights,
};
pub use terms::{
    BoundaryProfile, BoxBarrier, CenterLineGaussian, CollisionBarrier, ControlEffort, GoalDistance,
    LaneBoundaryBarrier, LaneBounds, SpeedHeadingBarrier, SquaredDistance,
};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::types::Agent;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("`{term}` left its domain (barrier argument {argument:e} <= 0)")]
    Domain { term: &'static str, argument: f64 },
    #[error("sequence lengths differ: {states} states, {controls1} and {controls2} controls")]
    LengthMismatch {
        states: usize,
        controls1: usize,
        controls2: usize,
    },
}

/// Second-order expansion of one agent's stage cost about `(x, u1, u2)`.
///
/// `control_hess[j]` and `control_grad[j]` are the derivatives with respect to
/// agent `j`'s control, i.e. `R^{ij}` and `r^{ij}` for the owning agent `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticApproximation {
    pub owner: Agent,
    pub state_hess: DMatrix<f64>,
    pub state_grad: DVector<f64>,
    pub control_hess: [DMatrix<f64>; 2],
    pub control_grad: [DVector<f64>; 2],
    pub value: f64,
}

impl QuadraticApproximation {
    pub fn zeros(owner: Agent, n: usize, m: [usize; 2]) -> Self {
        Self {
            owner,
            state_hess: DMatrix::zeros(n, n),
            state_grad: DVector::zeros(n),
            control_hess: [DMatrix::zeros(m[0], m[0]), DMatrix::zeros(m[1], m[1])],
            control_grad: [DVector::zeros(m[0]), DVector::zeros(m[1])],
            value: 0.0,
        }
    }

    /// Evaluates the quadratic model at a displacement from the expansion point.
    pub fn predict(&self, dx: &DVector<f64>, du: [&DVector<f64>; 2]) -> f64 {
        let mut out = self.value + self.state_grad.dot(dx) + 0.5 * dx.dot(&(&self.state_hess * dx));
        for j in 0..2 {
            out += self.control_grad[j].dot(du[j]) + 0.5 * du[j].dot(&(&self.control_hess[j] * du[j]));
        }
        out
    }

    /// `Q` and the owner's own control block `R^{ii}` have no eigenvalue
    /// below `-tol` and `tol` respectively (checked by Cholesky).
    pub fn is_convex(&self, tol: f64) -> bool {
        let shifted_ok = |m: &DMatrix<f64>, shift: f64| {
            let mut s = m.clone();
            for k in 0..s.nrows() {
                s[(k, k)] += shift;
            }
            s.cholesky().is_some()
        };
        shifted_ok(&self.state_hess, tol) && shifted_ok(&self.control_hess[self.owner.index()], -tol)
    }
}

/// A stage cost `g_t^(i)(x, u1, u2)` owned by one agent.
pub trait StageCost: Send + Sync {
    fn owner(&self) -> Agent;

    fn evaluate(&self, x: &DVector<f64>, u1: &DVector<f64>, u2: &DVector<f64>) -> Result<f64, CostError>;

    fn quadraticize(
        &self,
        x: &DVector<f64>,
        u1: &DVector<f64>,
        u2: &DVector<f64>,
    ) -> Result<QuadraticApproximation, CostError>;

    /// Whether [`StageCost::quadraticize`] uses closed-form derivatives.
    fn analytic_derivatives(&self) -> bool {
        true
    }
}

/// One additive piece of a stage cost.
pub trait CostTerm: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;

    fn value(&self, x: &DVector<f64>, u: [&DVector<f64>; 2]) -> Result<f64, CostError>;

    /// Adds `weight` times this term's value, gradients and Hessians into `acc`.
    fn accumulate(
        &self,
        x: &DVector<f64>,
        u: [&DVector<f64>; 2],
        weight: f64,
        acc: &mut QuadraticApproximation,
    ) -> Result<(), CostError>;
}

/// `Σ_j w_j g_j` with strictly positive weights.
#[derive(Debug)]
pub struct WeightedCost {
    owner: Agent,
    n: usize,
    m: [usize; 2],
    terms: Vec<(f64, Box<dyn CostTerm>)>,
}

impl WeightedCost {
    pub fn new(owner: Agent, n: usize, m: [usize; 2]) -> Self {
        Self { owner, n, m, terms: Vec::new() }
    }

    /// Adds a term.
    ///
    /// # Panics
    /// If `weight` is not strictly positive and finite.
    pub fn with(mut self, weight: f64, term: impl CostTerm + 'static) -> Self {
        assert!(weight > 0.0 && weight.is_finite(), "cost weights must be positive, got {weight}");
        self.terms.push((weight, Box::new(term)));
        self
    }

    pub fn terms(&self) -> impl Iterator<Item = (f64, &dyn CostTerm)> {
        self.terms.iter().map(|(w, t)| (*w, t.as_ref()))
    }
}

impl StageCost for WeightedCost {
    fn owner(&self) -> Agent {
        self.owner
    }

    fn evaluate(&self, x: &DVector<f64>, u1: &DVector<f64>, u2: &DVector<f64>) -> Result<f64, CostError> {
        let mut total = 0.0;
        for (w, term) in &self.terms {
            total += w * term.value(x, [u1, u2])?;
        }
        Ok(total)
    }

    fn quadraticize(
        &self,
        x: &DVector<f64>,
        u1: &DVector<f64>,
        u2: &DVector<f64>,
    ) -> Result<QuadraticApproximation, CostError> {
        let mut acc = QuadraticApproximation::zeros(self.owner, self.n, self.m);
        for (w, term) in &self.terms {
            term.accumulate(x, [u1, u2], *w, &mut acc)?;
        }
        Ok(acc)
    }
}

/// `J^(i) = Σ_t g_t^(i)(x_t, u1_t, u2_t)` over the whole horizon.
pub fn sum_objective(
    cost: &dyn StageCost,
    states: &[DVector<f64>],
    controls1: &[DVector<f64>],
    controls2: &[DVector<f64>],
) -> Result<f64, CostError> {
    if states.len() != controls1.len() || states.len() != controls2.len() {
        return Err(CostError::LengthMismatch {
            states: states.len(),
            controls1: controls1.len(),
            controls2: controls2.len(),
        });
    }
    let mut total = 0.0;
    for ((x, u1), u2) in states.iter().zip(controls1).zip(controls2) {
        total += cost.evaluate(x, u1, u2)?;
    }
    Ok(total)
}

/// Adds `nu I` to `Q` and to every control Hessian `R^{ij}`.
pub fn convexify(approx: &QuadraticApproximation, nu: f64) -> QuadraticApproximation {
    let mut out = approx.clone();
    convexify_in_place(&mut out, nu);
    out
}

pub(crate) fn convexify_in_place(approx: &mut QuadraticApproximation, nu: f64) {
    debug_assert!(nu >= 0.0);
    if nu == 0.0 {
        return;
    }
    for k in 0..approx.state_hess.nrows() {
        approx.state_hess[(k, k)] += nu;
    }
    for r in &mut approx.control_hess {
        for k in 0..r.nrows() {
            r[(k, k)] += nu;
        }
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Smallest `nu >= 0` such that `Q + nu I` and `R^{ii} + nu I` both have
/// minimum eigenvalue at least `margin`.
pub fn auto_nu(approx: &QuadraticApproximation, margin: f64) -> f64 {
    let lambda = min_eigenvalue(&approx.state_hess).min(min_eigenvalue(&approx.control_hess[approx.owner.index()]));
    (margin - lambda).max(0.0)
}
