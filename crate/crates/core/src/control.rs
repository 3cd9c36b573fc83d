//! Optimal control of the extremal solution maps: reduced objective,
//! adjoints, projected gradient over a box, and stationarity certificates.
//!
//! Controls are nodal densities `f`; the state equation sees the load
//! `M_L f`. Every H inner product in this module uses the lumped mass, so the
//! reduced gradient is the nodal vector `ν f - p - q` and the box projection
//! is a nodewise clamp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_len, QviError, Result};
use crate::extremal::{iterate_extremal, Branch, ExtremalOptions, ExtremalResult, OrderInterval};
use crate::fem::{dot, max_abs, DiscreteSpace, DualField, Field, TOL_ORD};
use crate::linalg::DenseMatrix;
use crate::obstacle::ObstacleMap;
use crate::penalty::sigma_prime_diag;
use crate::scalar::{pos, Scalar};
use crate::sensitivity::{deriv_z, DerivativeOptions};

/// `min J(M(f), m(f), f)` over `u_a <= f <= u_b`, with
/// `J(y, z, f) = ½|a y + b z - y_d|²_H + (ν/2)|f|²_H`.
#[derive(Debug, Clone)]
pub struct ControlProblem<'a, S: Scalar> {
    pub space: &'a DiscreteSpace<S>,
    pub map: &'a dyn ObstacleMap<S>,
    /// Interval valid for every admissible load.
    pub interval: &'a OrderInterval<S>,
    pub a: S,
    pub b: S,
    pub y_d: Field<S>,
    pub nu: S,
    pub u_a: Field<S>,
    pub u_b: Field<S>,
    /// Adds `½|f - f_prox|²_H` when set.
    pub proximal: Option<Field<S>>,
    pub opts: ExtremalOptions<S>,
}

impl<'a, S: Scalar> ControlProblem<'a, S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        space: &'a DiscreteSpace<S>,
        map: &'a dyn ObstacleMap<S>,
        interval: &'a OrderInterval<S>,
        a: S,
        b: S,
        y_d: Field<S>,
        nu: S,
        u_a: Field<S>,
        u_b: Field<S>,
    ) -> Result<Self> {
        let n = space.n_interior();
        check_len(n, y_d.len())?;
        check_len(n, u_a.len())?;
        check_len(n, u_b.len())?;
        if !(nu > S::zero()) {
            return Err(QviError::Config(format!(
                "Tikhonov weight must be positive, got {nu}"
            )));
        }
        if u_a.iter().zip(u_b.iter()).any(|(&l, &u)| l > u) {
            return Err(QviError::Config("control bounds are not ordered".into()));
        }
        let prob = Self {
            space,
            map,
            interval,
            a,
            b,
            y_d,
            nu,
            u_a,
            u_b,
            proximal: None,
            opts: ExtremalOptions::tight(),
        };
        if !interval.admits(&prob.load(&prob.u_a)) || !interval.admits(&prob.load(&prob.u_b)) {
            return Err(QviError::Config(
                "order interval does not cover the admissible controls".into(),
            ));
        }
        Ok(prob)
    }

    pub fn with_options(mut self, opts: ExtremalOptions<S>) -> Self {
        self.opts = opts;
        self
    }

    pub fn with_proximal(mut self, center: Field<S>) -> Self {
        self.proximal = Some(center);
        self
    }

    pub fn load(&self, f: &Field<S>) -> DualField<S> {
        self.space.lumped_load(f)
    }

    /// Nodewise projection onto `[u_a, u_b]`.
    pub fn clamp(&self, f: &Field<S>) -> Field<S> {
        Field::raw(
            f.iter()
                .zip(self.u_a.iter().zip(self.u_b.iter()))
                .map(|(&v, (&l, &u))| v.max(l).min(u))
                .collect(),
        )
    }

    /// Lumped H inner product.
    pub fn inner(&self, x: &[S], y: &[S]) -> S {
        x.iter()
            .zip(y)
            .zip(self.space.mass_lumped())
            .map(|((&a, &b), &m)| a * b * m)
            .sum()
    }

    pub fn h_norm(&self, x: &[S]) -> S {
        self.inner(x, x).max(S::zero()).sqrt()
    }

    fn tracking(&self, y: &Field<S>, z: &Field<S>) -> Field<S> {
        Field::raw(
            (0..y.len())
                .map(|i| self.a * y[i] + self.b * z[i] - self.y_d[i])
                .collect(),
        )
    }

    /// `J_y` and `J_z` as load vectors.
    pub fn state_gradients(&self, y: &Field<S>, z: &Field<S>) -> (DualField<S>, DualField<S>) {
        let r = self.space.lumped_load(&self.tracking(y, z));
        (&r * self.a, &r * self.b)
    }

    pub fn objective(&self, y: &Field<S>, z: &Field<S>, f: &Field<S>) -> S {
        let r = self.tracking(y, z);
        let mut v = S::lit(0.5) * self.inner(&r, &r) + S::lit(0.5) * self.nu * self.inner(f, f);
        if let Some(c) = &self.proximal {
            let d = f - c;
            v += S::lit(0.5) * self.inner(&d, &d);
        }
        v
    }
}

/// Value of the reduced objective with the states it was evaluated at.
#[derive(Debug, Clone, Serialize)]
pub struct ObjectiveEval<S> {
    pub value: S,
    pub y: ExtremalResult<S>,
    pub z: ExtremalResult<S>,
}

/// `Ĵ_ρ(f) = J(M_ρ(f), m_ρ(f), f)`; `rho = 0` gives the unpenalized value.
pub fn reduced_objective<S: Scalar>(
    prob: &ControlProblem<'_, S>,
    rho: S,
    f: &Field<S>,
) -> Result<ObjectiveEval<S>> {
    check_len(prob.space.n_interior(), f.len())?;
    if f.iter()
        .zip(prob.u_a.iter().zip(prob.u_b.iter()))
        .any(|(&v, (&l, &u))| v < l - S::lit(TOL_ORD) || v > u + S::lit(TOL_ORD))
    {
        return Err(QviError::Config(
            "control outside the admissible box".into(),
        ));
    }
    let g = prob.load(f);
    let y = iterate_extremal(
        prob.space,
        rho,
        &g,
        prob.interval,
        Branch::Max,
        prob.map,
        &prob.opts,
    )?;
    let z = iterate_extremal(
        prob.space,
        rho,
        &g,
        prob.interval,
        Branch::Min,
        prob.map,
        &prob.opts,
    )?;
    Ok(ObjectiveEval {
        value: prob.objective(&y.solution, &z.solution, f),
        y,
        z,
    })
}

/// Adjoint states with their multipliers.
#[derive(Debug, Clone, Serialize)]
pub struct Adjoints<S> {
    pub p: Field<S>,
    pub q: Field<S>,
    /// `(1/ρ) M_L σ'_ρ(y - Φ(y)) p`.
    pub lambda: DualField<S>,
    pub zeta: DualField<S>,
    pub residual_p: S,
    pub residual_q: S,
}

/// Solves `(Kᵀ + (I - Gᵀ) D) p = -rhs` with `D = (1/ρ) M_L σ'_ρ(w - Φ(w))` and
/// `G = Φ'(w)`; returns `(p, D p, residual)`.
fn adjoint_solve<S: Scalar>(
    space: &DiscreteSpace<S>,
    map: &dyn ObstacleMap<S>,
    rho: S,
    w: &Field<S>,
    rhs: &DualField<S>,
) -> Result<(Field<S>, DualField<S>, S)> {
    let n = space.n_interior();
    let obstacle = map.eval(w)?;
    let inv = S::one() / rho;
    let d: Vec<S> = sigma_prime_diag(space, rho, &(w - &obstacle))?
        .into_iter()
        .map(|v| v * inv)
        .collect();
    let neg: Vec<S> = rhs.iter().map(|&v| -v).collect();
    let kt = space.stiffness().transpose();
    let coupled = !map.is_constant() && d.iter().any(|&v| v != S::zero());
    let (p, residual) = if coupled {
        let g = map.deriv_matrix(w)?;
        let mut a = kt.to_dense();
        // (I - Gᵀ) D: entry (i, j) is (δ_ij - G_ji) d_j.
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { S::one() } else { S::zero() };
                a[(i, j)] += (delta - g[(j, i)]) * d[j];
            }
        }
        let p = a.solve(&neg)?;
        let ap = a.mul_vec(&p)?;
        (
            p,
            max_abs(
                &ap.iter()
                    .zip(&neg)
                    .map(|(&x, &y)| x - y)
                    .collect::<Vec<_>>(),
            ),
        )
    } else {
        let a = kt.add_diagonal(&d)?;
        let p = a.solve(&neg)?;
        let ap = a.mul_vec(&p)?;
        (
            p,
            max_abs(
                &ap.iter()
                    .zip(&neg)
                    .map(|(&x, &y)| x - y)
                    .collect::<Vec<_>>(),
            ),
        )
    };
    let lambda = DualField::raw((0..n).map(|i| d[i] * p[i]).collect());
    Ok((Field::raw(p), lambda, residual))
}

/// Adjoints of the penalized extremal maps at `y = M_ρ(f)`, `z = m_ρ(f)`.
pub fn solve_adjoints<S: Scalar>(
    prob: &ControlProblem<'_, S>,
    rho: S,
    y: &Field<S>,
    z: &Field<S>,
) -> Result<Adjoints<S>> {
    if !(rho > S::zero()) {
        return Err(QviError::Config(
            "adjoints need a positive penalty parameter".into(),
        ));
    }
    let (jy, jz) = prob.state_gradients(y, z);
    let (p, lambda, residual_p) = adjoint_solve(prob.space, prob.map, rho, y, &jy)?;
    let (q, zeta, residual_q) = adjoint_solve(prob.space, prob.map, rho, z, &jz)?;
    Ok(Adjoints {
        p,
        q,
        lambda,
        zeta,
        residual_p,
        residual_q,
    })
}

/// Reduced gradient `ν f - p - q` (plus the proximal term), nodal.
pub fn reduced_gradient<S: Scalar>(
    prob: &ControlProblem<'_, S>,
    f: &Field<S>,
    adj: &Adjoints<S>,
) -> Field<S> {
    let mut g = Field::raw(
        (0..f.len())
            .map(|i| prob.nu * f[i] - adj.p[i] - adj.q[i])
            .collect(),
    );
    if let Some(c) = &prob.proximal {
        g = &g + &(f - c);
    }
    g
}

/// Projected-gradient settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions<S> {
    /// Stop at `|f - clamp(f - ∇Ĵ)|_H <= tol_kkt`.
    pub tol_kkt: S,
    pub max_iter: usize,
    pub armijo_slope: S,
    pub max_backtracks: usize,
    /// Below this KKT residual, projected Newton steps on the free nodes are
    /// tried first, with a difference Hessian of the adjoint gradient.
    pub newton_below: S,
}

impl<S: Scalar> Default for OptimizeOptions<S> {
    fn default() -> Self {
        Self {
            tol_kkt: S::tol_floor(1e-7, 1e3),
            max_iter: 2000,
            armijo_slope: S::lit(1e-4),
            max_backtracks: 60,
            newton_below: S::lit(1e-5),
        }
    }
}

/// One projected-gradient iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint<S> {
    pub iter: usize,
    pub rho: S,
    pub value: S,
    pub kkt_residual: S,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeResult<S> {
    pub f: Field<S>,
    pub value: S,
    pub kkt_residual: S,
    pub trajectory: Vec<TrajectoryPoint<S>>,
}

struct Point<S> {
    f: Field<S>,
    value: S,
    grad: Field<S>,
}

fn evaluate<S: Scalar>(prob: &ControlProblem<'_, S>, rho: S, f: Field<S>) -> Result<Point<S>> {
    let ev = reduced_objective(prob, rho, &f)?;
    let adj = solve_adjoints(prob, rho, &ev.y.solution, &ev.z.solution)?;
    let grad = reduced_gradient(prob, &f, &adj);
    Ok(Point {
        f,
        value: ev.value,
        grad,
    })
}

fn kkt<S: Scalar>(prob: &ControlProblem<'_, S>, pt: &Point<S>) -> S {
    let proj = prob.clamp(&(&pt.f - &pt.grad));
    prob.h_norm(&(&pt.f - &proj))
}

const NONMONOTONE_MEMORY: usize = 8;

/// Backtracking along the projection arc from `t0`. Returns the accepted
/// point and its step.
fn line_search<S: Scalar>(
    prob: &ControlProblem<'_, S>,
    rho: S,
    pt: &Point<S>,
    t0: S,
    reference: S,
    res: S,
    opts: &OptimizeOptions<S>,
) -> Result<Option<(Point<S>, S)>> {
    let mut t = t0;
    for _ in 0..opts.max_backtracks {
        let trial = prob.clamp(&pt.f.axpy(-t, &pt.grad));
        let delta = &trial - &pt.f;
        let decrease = prob.inner(&pt.grad, &delta);
        if prob.h_norm(&delta) == S::zero() {
            return Ok(None);
        }
        let cand = evaluate(prob, rho, trial)?;
        // Near stationarity the Armijo decrease drops below rounding in the
        // objective; then a strict drop of the KKT residual decides.
        let noise = S::lit(64.0) * S::epsilon() * (S::one() + pt.value.abs());
        if cand.value <= reference + opts.armijo_slope * decrease
            || (cand.value <= pt.value + noise && kkt(prob, &cand) < res)
        {
            return Ok(Some((cand, t)));
        }
        t *= S::lit(0.5);
    }
    Ok(None)
}

/// Projected Newton step: Newton on the nodes that are not held at a bound,
/// gradient on the rest, backtracked along the projection arc.
fn newton_step<S: Scalar>(
    prob: &ControlProblem<'_, S>,
    rho: S,
    pt: &Point<S>,
    res: S,
    opts: &OptimizeOptions<S>,
) -> Result<Option<Point<S>>> {
    let n = pt.f.len();
    let eps_act = res;
    let free: Vec<usize> = (0..n)
        .filter(|&i| {
            let (f, g) = (pt.f[i], pt.grad[i]);
            !((f <= prob.u_a[i] + eps_act && g > S::zero())
                || (f >= prob.u_b[i] - eps_act && g < S::zero()))
        })
        .collect();
    let m = free.len();
    let mut dir: Vec<S> = pt.grad.iter().map(|&g| -g).collect();
    if m > 0 {
        let mut hess = DenseMatrix::zeros(m, m);
        let root = S::epsilon().sqrt();
        for (c, &j) in free.iter().enumerate() {
            let mut h = root * (S::one() + pt.f[j].abs());
            if pt.f[j] + h > prob.u_b[j] {
                h = -h;
            }
            let mut moved = pt.f.clone().into_inner();
            moved[j] += h;
            let g = evaluate(prob, rho, Field::raw(moved))?.grad;
            for (r, &i) in free.iter().enumerate() {
                hess[(r, c)] = (g[i] - pt.grad[i]) / h;
            }
        }
        let rhs: Vec<S> = free.iter().map(|&i| -pt.grad[i]).collect();
        // The penalty curvature can cancel `ν`, so the Newton system is
        // shifted by `μ I` with `μ` raised until a step is accepted.
        let mut mu = S::zero();
        for _ in 0..10 {
            let mut shifted = hess.clone();
            for r in 0..m {
                shifted[(r, r)] += mu;
            }
            if let Ok(d) = shifted.solve(&rhs) {
                for (r, &i) in free.iter().enumerate() {
                    dir[i] = d[r];
                }
                if let Some(next) =
                    try_direction(prob, rho, pt, &Field::raw(dir.clone()), res, opts)?
                {
                    return Ok(Some(next));
                }
            }
            mu = if mu == S::zero() {
                prob.nu
            } else {
                mu * S::lit(10.0)
            };
        }
        return Ok(None);
    }
    try_direction(prob, rho, pt, &Field::raw(dir), res, opts)
}

fn try_direction<S: Scalar>(
    prob: &ControlProblem<'_, S>,
    rho: S,
    pt: &Point<S>,
    dir: &Field<S>,
    res: S,
    opts: &OptimizeOptions<S>,
) -> Result<Option<Point<S>>> {
    let mut t = S::one();
    for _ in 0..3 {
        let trial = prob.clamp(&pt.f.axpy(t, dir));
        let decrease = prob.inner(&pt.grad, &(&trial - &pt.f));
        if decrease >= S::zero() {
            return Ok(None);
        }
        let cand = evaluate(prob, rho, trial)?;
        let noise = S::lit(64.0) * S::epsilon() * (S::one() + pt.value.abs());
        if cand.value <= pt.value + opts.armijo_slope * decrease
            || (cand.value <= pt.value + noise && kkt(prob, &cand) < res)
        {
            return Ok(Some(cand));
        }
        t *= S::lit(0.5);
    }
    Ok(None)
}

/// Projected gradient with Barzilai–Borwein trial steps and nonmonotone Armijo
/// backtracking along the projection arc, warm-started across the schedule.
pub fn optimize<S: Scalar>(
    prob: &ControlProblem<'_, S>,
    rho_schedule: &[S],
    f0: &Field<S>,
    opts: &OptimizeOptions<S>,
) -> Result<OptimizeResult<S>> {
    if rho_schedule.is_empty() {
        return Err(QviError::Config("empty rho schedule".into()));
    }
    let mut f = prob.clamp(f0);
    let mut trajectory = Vec::new();
    let mut value = S::zero();
    let mut res = S::infinity();
    let mut iter = 0;
    for &rho in rho_schedule {
        let mut pt = evaluate(prob, rho, f.clone())?;
        let base_step = S::one() / prob.nu.max(S::one());
        let mut step = base_step;
        let mut prev: Option<(Field<S>, Field<S>)> = None;
        // Nonmonotone reference: the largest of the recent objective values.
        let mut recent: Vec<S> = Vec::new();
        for _ in 0..opts.max_iter {
            res = kkt(prob, &pt);
            trajectory.push(TrajectoryPoint {
                iter,
                rho,
                value: pt.value,
                kkt_residual: res,
            });
            if res <= opts.tol_kkt {
                break;
            }
            iter += 1;
            recent.push(pt.value);
            if recent.len() > NONMONOTONE_MEMORY {
                recent.remove(0);
            }
            let reference = if res <= opts.newton_below {
                pt.value
            } else {
                recent.iter().fold(pt.value, |m, &v| m.max(v))
            };
            if let Some((pf, pg)) = &prev {
                let s = &pt.f - pf;
                let y = &pt.grad - pg;
                let sy = prob.inner(&s, &y);
                if sy > S::zero() {
                    step = prob.inner(&s, &s) / sy;
                }
            }
            if res <= opts.newton_below {
                if let Some(next) = newton_step(prob, rho, &pt, res, opts)? {
                    prev = None;
                    pt = next;
                    continue;
                }
            }
            let mut accepted = line_search(prob, rho, &pt, step, reference, res, opts)?;
            if accepted.is_none() && step != base_step {
                // Restart from the safeguarded step with the BB memory dropped.
                accepted = line_search(prob, rho, &pt, base_step, pt.value, res, opts)?;
            }
            match accepted {
                Some((next, t)) => {
                    prev = Some((pt.f.clone(), pt.grad.clone()));
                    pt = next;
                    step = t;
                }
                None => {
                    return Err(QviError::LineSearch {
                        gradient_norm: res.to_f64_lossy(),
                    });
                }
            }
        }
        if res > opts.tol_kkt {
            return Err(QviError::NoConvergence {
                solver: "projected gradient",
                iterations: opts.max_iter,
                residual: res.to_f64_lossy(),
                history: trajectory
                    .iter()
                    .rev()
                    .take(10)
                    .map(|p| p.kkt_residual.to_f64_lossy())
                    .collect(),
            });
        }
        f = pt.f;
        value = pt.value;
    }
    Ok(OptimizeResult {
        f,
        value,
        kkt_residual: res,
        trajectory,
    })
}

/// `(Ĵ(f + s h) - Ĵ(f))/s` against `<∇Ĵ(f), h>_H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientCheck<S> {
    pub difference_quotient: S,
    pub adjoint: S,
    pub relative_error: S,
}

pub fn gradient_check<S: Scalar>(
    prob: &ControlProblem<'_, S>,
    rho: S,
    f: &Field<S>,
    h: &Field<S>,
    s: S,
) -> Result<GradientCheck<S>> {
    let base = evaluate(prob, rho, f.clone())?;
    let moved = reduced_objective(prob, rho, &f.axpy(s, h))?;
    let fd = (moved.value - base.value) / s;
    let adjoint = prob.inner(&base.grad, h);
    Ok(GradientCheck {
        difference_quotient: fd,
        adjoint,
        relative_error: (fd - adjoint).abs() / adjoint.abs().max(S::min_positive_value()),
    })
}

/// Tolerances of the stationarity checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateTolerances<S> {
    pub adjoint: S,
    pub control_vi: S,
    pub sign: S,
    pub orthogonality: S,
    pub support: S,
    pub complementarity: S,
    pub regularity: S,
    pub consistency: S,
    pub tol_act: S,
}

impl<S: Scalar> Default for CertificateTolerances<S> {
    fn default() -> Self {
        Self {
            adjoint: S::tol_floor(1e-8, 1e3),
            control_vi: S::tol_floor(1e-7, 1e3),
            sign: S::tol_floor(1e-7, 1e3),
            orthogonality: S::tol_floor(1e-6, 1e3),
            support: S::tol_floor(1e-6, 1e3),
            complementarity: S::tol_floor(1e-8, 1e3),
            regularity: S::tol_floor(1e-6, 1e3),
            consistency: S::tol_floor(1e-10, 1e3),
            tol_act: S::tol_floor(1e-7, 1e3),
        }
    }
}

/// One named check with its value, tolerance and verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check<S> {
    pub name: &'static str,
    pub value: S,
    pub tolerance: S,
    pub pass: bool,
}

/// First-order system at a computed control.
///
/// `y`, `z` are the exact extremal states `M(f)`, `m(f)` with
/// `ξ₁ = f - Ky`, `ξ₂ = f - Kz`; the adjoints and multipliers come from the
/// penalized problem at the terminal `ρ`, evaluated at the penalized states.
#[derive(Debug, Clone, Serialize)]
pub struct StationarityCertificate<S> {
    pub rho: S,
    pub y: Field<S>,
    pub z: Field<S>,
    pub p: Field<S>,
    pub q: Field<S>,
    pub lambda: DualField<S>,
    pub zeta: DualField<S>,
    pub xi1: DualField<S>,
    pub xi2: DualField<S>,
    pub checks: Vec<Check<S>>,
    /// `<λ, ψ p>` for ψ = 1, x, 1 - x, sin(πx); reported, not asserted.
    pub weighted_signs: Vec<(String, S)>,
    pub pass: bool,
}

impl<S: Scalar> StationarityCertificate<S> {
    pub fn check(&self, name: &str) -> Option<&Check<S>> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn split_dot<S: Scalar>(xi: &DualField<S>, v: &Field<S>, positive: bool) -> S {
    xi.iter()
        .zip(v.iter())
        .map(|(&a, &b)| a * if positive { pos(b) } else { pos(-b) })
        .sum()
}

/// Assembles and checks the stationarity system at `f_star`.
pub fn certify_stationarity<S: Scalar>(
    prob: &ControlProblem<'_, S>,
    f_star: &Field<S>,
    rho_small: S,
    tol: &CertificateTolerances<S>,
) -> Result<StationarityCertificate<S>> {
    let space = prob.space;
    let load = prob.load(f_star);
    let pen = reduced_objective(prob, rho_small, f_star)?;
    let adj = solve_adjoints(prob, rho_small, &pen.y.solution, &pen.z.solution)?;
    let exact = reduced_objective(prob, S::zero(), f_star)?;
    let y = exact.y.solution;
    let z = exact.z.solution;
    let ky = space.apply_stiffness(&y)?;
    let kz = space.apply_stiffness(&z)?;
    let xi1 = &load - &ky;
    let xi2 = &load - &kz;
    let phi_y = prob.map.eval(&y)?;
    let phi_z = prob.map.eval(&z)?;

    let mut checks = Vec::new();
    let mut push = |name: &'static str, value: S, tolerance: S, pass: bool| {
        checks.push(Check {
            name,
            value,
            tolerance,
            pass,
        });
    };
    push(
        "adjoint_p_residual",
        adj.residual_p,
        tol.adjoint,
        adj.residual_p <= tol.adjoint,
    );
    push(
        "adjoint_q_residual",
        adj.residual_q,
        tol.adjoint,
        adj.residual_q <= tol.adjoint,
    );

    let grad = reduced_gradient(prob, f_star, &adj);
    let vi = prob.h_norm(&(f_star - &prob.clamp(&(f_star - &grad))));
    push(
        "control_vi_residual",
        vi,
        tol.control_vi,
        vi <= tol.control_vi,
    );

    let lp = dot(&adj.lambda, &adj.p);
    let zq = dot(&adj.zeta, &adj.q);
    push("lambda_p_sign", lp, tol.sign, lp >= -tol.sign);
    push("zeta_q_sign", zq, tol.sign, zq >= -tol.sign);

    for (name, v) in [
        ("xi1_p_plus", split_dot(&xi1, &adj.p, true)),
        ("xi1_p_minus", split_dot(&xi1, &adj.p, false)),
        ("xi2_q_plus", split_dot(&xi2, &adj.q, true)),
        ("xi2_q_minus", split_dot(&xi2, &adj.q, false)),
    ] {
        push(
            name,
            v.abs(),
            tol.orthogonality,
            v.abs() <= tol.orthogonality,
        );
    }

    let support = |mult: &DualField<S>, state: &Field<S>, obstacle: &Field<S>| {
        (0..mult.len())
            .filter(|&i| state[i] < obstacle[i] - tol.tol_act)
            .fold(S::zero(), |m, i| m.max(mult[i].abs()))
    };
    let sl = support(&adj.lambda, &y, &phi_y);
    let sz = support(&adj.zeta, &z, &phi_z);
    push("lambda_support", sl, tol.support, sl <= tol.support);
    push("zeta_support", sz, tol.support, sz <= tol.support);

    let c1 = dot(&xi1, &(&y - &phi_y)).abs();
    let c2 = dot(&xi2, &(&z - &phi_z)).abs();
    push(
        "xi1_complementarity",
        c1,
        tol.complementarity,
        c1 <= tol.complementarity,
    );
    push(
        "xi2_complementarity",
        c2,
        tol.complementarity,
        c2 <= tol.complementarity,
    );

    let neg1 = xi1.iter().fold(S::zero(), |m, &v| m.max(-v));
    let neg2 = xi2.iter().fold(S::zero(), |m, &v| m.max(-v));
    let tol_ord = S::tol_floor(TOL_ORD, 1e3);
    push("xi1_nonnegative", neg1, tol_ord, neg1 <= tol_ord);
    push("xi2_nonnegative", neg2, tol_ord, neg2 <= tol_ord);
    let cons = max_abs(&(&(&ky + &xi1) - &load)).max(max_abs(&(&(&kz + &xi2) - &load)));
    push(
        "state_consistency",
        cons,
        tol.consistency,
        cons <= tol.consistency,
    );

    if prob.proximal.is_none() {
        let reg = (0..f_star.len()).fold(S::zero(), |m, i| {
            let w = (adj.p[i] + adj.q[i]) / prob.nu;
            let rhs = w + pos(prob.u_a[i] - w) - pos(w - prob.u_b[i]);
            m.max((rhs - f_star[i]).abs())
        });
        push(
            "regularity_identity",
            reg,
            tol.regularity,
            reg <= tol.regularity,
        );
    }

    type Weight<S> = (&'static str, fn(S) -> S);
    let weights: [Weight<S>; 4] = [
        ("1", |_| S::one()),
        ("x", |x| x),
        ("1-x", |x| S::one() - x),
        ("sin(pi x)", |x| (S::pi() * x).sin()),
    ];
    let weighted_signs = weights
        .iter()
        .map(|(name, w)| {
            let psi = space.interpolate(w);
            let v = (0..psi.len())
                .map(|i| adj.lambda[i] * psi[i] * adj.p[i])
                .sum();
            (name.to_string(), v)
        })
        .collect();

    let pass = checks.iter().all(|c| c.pass);
    Ok(StationarityCertificate {
        rho: rho_small,
        y,
        z,
        p: adj.p,
        q: adj.q,
        lambda: adj.lambda,
        zeta: adj.zeta,
        xi1,
        xi2,
        checks,
        weighted_signs,
        pass,
    })
}

/// Most negative directional derivative of the unpenalized reduced
/// objective over sampled tangent directions of the box.
#[derive(Debug, Clone, Serialize)]
pub struct BouligandReport<S> {
    pub values: Vec<S>,
    pub min_value: S,
}

/// Samples `count` tangent directions at `f_star` (nonnegative where the
/// lower bound is attained, nonpositive at the upper bound, free elsewhere),
/// normalized to `|h|_H = 1`, and evaluates
/// `<J_y, M'(f)(h)> + <J_z, m'(f)(h)> + <J_f, h>` with the QVI derivatives.
pub fn bouligand_residual<S: Scalar>(
    prob: &ControlProblem<'_, S>,
    f_star: &Field<S>,
    count: usize,
    seed: u64,
    opts: &DerivativeOptions<S>,
) -> Result<BouligandReport<S>> {
    let exact = reduced_objective(prob, S::zero(), f_star)?;
    let y = &exact.y;
    let z = &exact.z;
    let (jy, jz) = prob.state_gradients(&y.solution, &z.solution);
    let mut jf = f_star * prob.nu;
    if let Some(c) = &prob.proximal {
        jf = &jf + &(f_star - c);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = S::lit(TOL_ORD);
    let n = f_star.len();
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let mut h = Field::raw(
            (0..n)
                .map(|i| {
                    let r = S::lit(rng.gen_range(-1.0..1.0));
                    let at_lower = f_star[i] <= prob.u_a[i] + tol;
                    let at_upper = f_star[i] >= prob.u_b[i] - tol;
                    match (at_lower, at_upper) {
                        (true, true) => S::zero(),
                        (true, false) => r.abs(),
                        (false, true) => -r.abs(),
                        (false, false) => r,
                    }
                })
                .collect(),
        );
        let norm = prob.h_norm(&h);
        if norm == S::zero() {
            values.push(S::zero());
            continue;
        }
        h = &h * (S::one() / norm);
        let d = prob.load(&h);
        let mut v = prob.inner(&jf, &h);
        if prob.a != S::zero() || prob.b != S::zero() {
            let alpha = deriv_z(prob.space, &y.solution, &y.xi, &d, prob.map, opts)?.alpha;
            let beta = deriv_z(prob.space, &z.solution, &z.xi, &d, prob.map, opts)?.alpha;
            v += dot(&jy, &alpha) + dot(&jz, &beta);
        }
        values.push(v);
    }
    let min_value = values.iter().fold(S::infinity(), |m, &v| m.min(v));
    Ok(BouligandReport { values, min_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extremal::make_interval_from_bound;
    use crate::obstacle::ConstantObstacle;
    use crate::vi::SolverOptions;
    use std::f64::consts::PI;

    fn setup(n: usize) -> (DiscreteSpace<f64>, ConstantObstacle<f64>) {
        let s = DiscreteSpace::<f64>::laplace(n).unwrap();
        let map = ConstantObstacle::new(s.interpolate(|x| 0.08 + 0.02 * x));
        (s, map)
    }

    #[test]
    fn tikhonov_only_objective() {
        let (s, map) = setup(16);
        let iv = make_interval_from_bound(
            &s,
            &s.lumped_load(&Field::constant(16, 10.0)),
            &map,
            1.0,
            &SolverOptions::default(),
        )
        .unwrap();
        let prob = ControlProblem::new(
            &s,
            &map,
            &iv,
            0.0,
            0.0,
            s.zeros(),
            0.5,
            s.zeros(),
            Field::constant(16, 10.0),
        )
        .unwrap();
        let f = s.interpolate(|x| 3.0 * x);
        let ev = reduced_objective(&prob, 1e-3, &f).unwrap();
        assert!((ev.value - 0.25 * prob.inner(&f, &f)).abs() < 1e-14);
        let zero = reduced_objective(&prob, 1e-3, &s.zeros()).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn adjoint_vanishes_without_tracking() {
        let (s, map) = setup(16);
        let iv = make_interval_from_bound(
            &s,
            &s.lumped_load(&Field::constant(16, 10.0)),
            &map,
            1.0,
            &SolverOptions::default(),
        )
        .unwrap();
        let prob = ControlProblem::new(
            &s,
            &map,
            &iv,
            1.0,
            0.0,
            s.zeros(),
            0.5,
            s.zeros(),
            Field::constant(16, 10.0),
        )
        .unwrap();
        let adj = solve_adjoints(&prob, 1e-3, &s.zeros(), &s.zeros()).unwrap();
        assert_eq!(adj.p.max_abs(), 0.0);
        assert_eq!(adj.q.max_abs(), 0.0);
    }

    #[test]
    fn inactive_adjoint_is_transposed_solve() {
        let (s, map) = setup(16);
        let iv = make_interval_from_bound(
            &s,
            &s.lumped_load(&Field::constant(16, 10.0)),
            &map,
            1.0,
            &SolverOptions::default(),
        )
        .unwrap();
        let y_d = s.interpolate(|x| (PI * x).sin());
        let prob = ControlProblem::new(
            &s,
            &map,
            &iv,
            1.0,
            0.0,
            y_d.clone(),
            0.5,
            s.zeros(),
            Field::constant(16, 10.0),
        )
        .unwrap();
        let y = s.interpolate(|x| 0.01 * x * (1.0 - x));
        let adj = solve_adjoints(&prob, 1e-3, &y, &s.zeros()).unwrap();
        let jy = s.lumped_load(&(&y - &y_d));
        let expect = s.stiffness().transpose().solve(&jy.map(|v| -v)).unwrap();
        assert!((&adj.p - &Field::new(expect).unwrap()).max_abs() < 1e-14);
    }

    #[test]
    fn large_tikhonov_drives_control_to_projection_of_zero() {
        let (s, map) = setup(16);
        let ua = Field::constant(16, 0.5);
        let iv = make_interval_from_bound(
            &s,
            &s.lumped_load(&Field::constant(16, 10.0)),
            &map,
            1.0,
            &SolverOptions::default(),
        )
        .unwrap();
        let prob = ControlProblem::new(
            &s,
            &map,
            &iv,
            1.0,
            0.0,
            s.zeros(),
            1e6,
            ua.clone(),
            Field::constant(16, 10.0),
        )
        .unwrap();
        let res = optimize(
            &prob,
            &[1e-3],
            &Field::constant(16, 5.0),
            &OptimizeOptions::default(),
        )
        .unwrap();
        assert!((&res.f - &ua).max_abs() < 1e-10);
        let values: Vec<f64> = res.trajectory.iter().map(|p| p.value).collect();
        assert!(values.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn clamp_is_idempotent() {
        let (s, map) = setup(8);
        let iv = make_interval_from_bound(
            &s,
            &s.lumped_load(&Field::constant(8, 10.0)),
            &map,
            1.0,
            &SolverOptions::default(),
        )
        .unwrap();
        let prob = ControlProblem::new(
            &s,
            &map,
            &iv,
            1.0,
            0.0,
            s.zeros(),
            1.0,
            s.zeros(),
            Field::constant(8, 10.0),
        )
        .unwrap();
        let x = Field::new(vec![-3.0, 0.0, 4.0, 11.0, 10.0, -0.1, 5.0, 20.0]).unwrap();
        let c = prob.clamp(&x);
        assert_eq!(prob.clamp(&c), c);
        assert!(ControlProblem::new(
            &s,
            &map,
            &iv,
            1.0,
            0.0,
            s.zeros(),
            0.0,
            s.zeros(),
            Field::constant(8, 10.0)
        )
        .is_err());
    }
}
