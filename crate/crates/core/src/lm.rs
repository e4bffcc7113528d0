//! Damped least squares (Levenberg–Marquardt).
//!
//! Steps solve `(JᵀJ + λ·diag(JᵀJ))·δ = -Jᵀr`. An accepted step shrinks λ
//! (towards Gauss–Newton); a rejected one grows it (towards scaled gradient
//! descent). The objective `½‖r‖²` never increases across accepted steps.

use crate::scalar::Scalar;

pub trait LeastSquaresProblem<T: Scalar> {
    fn residual_count(&self) -> usize;

    fn residuals(&self, params: &[T], out: &mut [T]);

    /// Row-major `residual_count × params.len()` Jacobian of the residuals.
    /// Defaults to central differences.
    fn jacobian(&self, params: &[T], out: &mut [T]) {
        finite_difference_jacobian(self, params, out);
    }

    /// Project parameters back into their feasible region.
    fn constrain(&self, _params: &mut [T]) {}
}

pub fn finite_difference_jacobian<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(problem: &P, params: &[T], out: &mut [T]) {
    let n = problem.residual_count();
    let p = params.len();
    let mut plus = vec![T::zero(); n];
    let mut minus = vec![T::zero(); n];
    let mut x = params.to_vec();
    let eps = T::epsilon().cbrt();
    for j in 0..p {
        let h = eps * params[j].abs().max(T::one());
        x[j] = params[j] + h;
        problem.residuals(&x, &mut plus);
        x[j] = params[j] - h;
        problem.residuals(&x, &mut minus);
        x[j] = params[j];
        for i in 0..n {
            out[i * p + j] = (plus[i] - minus[i]) / (h + h);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig<T> {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the objective by less than this fraction.
    pub objective_rtol: T,
    pub initial_damping: T,
}

impl<T: Scalar> Default for LmConfig<T> {
    fn default() -> Self {
        LmConfig {
            max_iterations: 200,
            objective_rtol: T::of(1e-8).max(T::epsilon() * T::of(4.0)),
            initial_damping: T::of(1e-3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ObjectiveTolerance,
    ExactFit,
    /// Damping blew up without finding a downhill step.
    Stalled,
    IterationBudget,
}

#[derive(Debug, Clone)]
pub struct LmReport<T> {
    pub params: Vec<T>,
    /// `½‖r‖²` at the solution.
    pub objective: T,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective after every accepted step, starting with the initial value.
    pub objective_history: Vec<T>,
    /// `(JᵀJ)⁻¹` at the solution, row-major, if the normal matrix is invertible.
    pub inverse_normal: Option<Vec<T>>,
}

impl<T: Scalar> LmReport<T> {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::ObjectiveTolerance | Termination::ExactFit | Termination::Stalled
        )
    }

    /// `(JᵀJ)⁻¹` scaled by the residual variance `2·objective/(n - p)`.
    pub fn scaled_covariance(&self, residual_count: usize) -> Option<Vec<T>> {
        let p = self.params.len();
        let dof = residual_count.checked_sub(p).filter(|&d| d > 0)?;
        let s2 = T::of(2.0) * self.objective / T::of(dof as f64);
        self.inverse_normal
            .as_ref()
            .map(|m| m.iter().map(|&v| v * s2).collect())
    }
}

fn objective<T: Scalar>(r: &[T]) -> T {
    r.iter().map(|&v| v * v).sum::<T>() / T::of(2.0)
}

/// In-place Cholesky factorization of a symmetric positive definite matrix.
fn cholesky<T: Scalar>(a: &mut [T], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

fn cholesky_solve<T: Scalar>(l: &[T], n: usize, b: &mut [T]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse<T: Scalar>(a: &[T], n: usize) -> Option<Vec<T>> {
    let mut l = a.to_vec();
    if !cholesky(&mut l, n) {
        return None;
    }
    let mut inv = vec![T::zero(); n * n];
    let mut col = vec![T::zero(); n];
    for j in 0..n {
        col.iter_mut().for_each(|c| *c = T::zero());
        col[j] = T::one();
        cholesky_solve(&l, n, &mut col);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Some(inv)
}

fn normal_equations<T: Scalar>(jac: &[T], r: &[T], n: usize, p: usize) -> (Vec<T>, Vec<T>) {
    let mut jtj = vec![T::zero(); p * p];
    let mut jtr = vec![T::zero(); p];
    for i in 0..n {
        let row = &jac[i * p..(i + 1) * p];
        for a in 0..p {
            jtr[a] += row[a] * r[i];
            for b in 0..=a {
                jtj[a * p + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            jtj[b * p + a] = jtj[a * p + b];
        }
    }
    (jtj, jtr)
}

pub fn minimize<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(problem: &P, initial: &[T], config: &LmConfig<T>) -> LmReport<T> {
    let n = problem.residual_count();
    let p = initial.len();
    let mut x = initial.to_vec();
    problem.constrain(&mut x);
    let mut r = vec![T::zero(); n];
    let mut jac = vec![T::zero(); n * p];
    problem.residuals(&x, &mut r);
    let mut cost = objective(&r);
    let mut history = vec![cost];
    let mut lambda = config.initial_damping;
    let mut iterations = 0;
    let mut termination = Termination::IterationBudget;

    let mut trial = vec![T::zero(); p];
    let mut r_trial = vec![T::zero(); n];
    problem.jacobian(&x, &mut jac);
    let (mut jtj, mut jtr) = normal_equations(&jac, &r, n, p);

    while iterations < config.max_iterations {
        if cost == T::zero() {
            termination = Termination::ExactFit;
            break;
        }
        iterations += 1;
        let mut a = jtj.clone();
        for k in 0..p {
            let d = jtj[k * p + k].max(T::min_positive_value().sqrt());
            a[k * p + k] += lambda * d;
        }
        let mut step: Vec<T> = jtr.iter().map(|&g| -g).collect();
        let solved = cholesky(&mut a, p);
        if solved {
            cholesky_solve(&a, p, &mut step);
        }
        if !solved || step.iter().any(|s| !s.is_finite()) {
            lambda *= T::of(10.0);
            if lambda > T::of(1e20) {
                termination = Termination::Stalled;
                break;
            }
            continue;
        }
        for k in 0..p {
            trial[k] = x[k] + step[k];
        }
        problem.constrain(&mut trial);
        problem.residuals(&trial, &mut r_trial);
        let new_cost = objective(&r_trial);

        if new_cost.is_finite() && new_cost <= cost {
            let drop = cost - new_cost;
            x.copy_from_slice(&trial);
            std::mem::swap(&mut r, &mut r_trial);
            cost = new_cost;
            history.push(cost);
            lambda = (lambda / T::of(3.0)).max(T::of(1e-12));
            problem.jacobian(&x, &mut jac);
            let ne = normal_equations(&jac, &r, n, p);
            jtj = ne.0;
            jtr = ne.1;
            if drop <= config.objective_rtol * (cost + drop) {
                termination = Termination::ObjectiveTolerance;
                break;
            }
        } else {
            lambda *= T::of(4.0);
            if lambda > T::of(1e20) {
                termination = Termination::Stalled;
                break;
            }
        }
    }

    LmReport {
        params: x,
        objective: cost,
        iterations,
        termination,
        objective_history: history,
        inverse_normal: spd_inverse(&jtj, p),
    }
}
