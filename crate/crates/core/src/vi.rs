//! The two solution maps of the fixed-obstacle problems: `S(f, φ)` for the
//! obstacle VI with upper bound `Φ(φ)`, and `T_ρ(f, φ)` for the penalized
//! semilinear equation.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{check_len, QviError, Result};
use crate::fem::{max_abs, DiscreteSpace, DualField, Field};
use crate::linalg::Tridiagonal;
use crate::obstacle::ObstacleMap;
use crate::penalty::{sigma, sigma_prime};
use crate::scalar::{pos, Scalar};

/// Tolerances and iteration limits shared by the VI and penalized solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<S> {
    /// Constant `c` in `min(ξ, c(ψ - u)) = 0`.
    pub pdas_c: S,
    pub max_pdas: usize,
    /// Newton stops once `|F(u)|_∞ <= newton_tol (1 + |f|_∞)`.
    pub newton_tol: S,
    pub max_newton: usize,
    pub armijo_factor: S,
    pub armijo_slope: S,
    pub tol_comp: S,
}

impl<S: Scalar> Default for SolverOptions<S> {
    fn default() -> Self {
        Self {
            pdas_c: S::one(),
            max_pdas: 500,
            newton_tol: S::tol_floor(1e-11, 1.0),
            max_newton: 100,
            armijo_factor: S::lit(0.5),
            armijo_slope: S::lit(1e-4),
            tol_comp: S::tol_floor(1e-9, 1.0),
        }
    }
}

impl<S: Scalar> SolverOptions<S> {
    /// Newton runs to the rounding floor; used for difference quotients.
    pub fn tight() -> Self {
        Self {
            newton_tol: S::tol_floor(1e-15, 1.0),
            ..Self::default()
        }
    }
}

/// Result of a single `S` or `T_ρ` solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport<S> {
    pub solution: Field<S>,
    pub iterations: usize,
    pub final_residual: S,
    /// `f - Ku` for `S`; `(1/ρ) M_L σ_ρ(u - Φ(φ))` for `T_ρ`.
    pub xi: DualField<S>,
    pub active_set: Vec<usize>,
}

/// Per-node constraint for the active-set solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint<S> {
    Free,
    /// `u_i <= b`.
    Upper(S),
    /// `u_i = b`.
    Fixed(S),
}

/// Output of [`pdas`].
#[derive(Debug, Clone)]
pub struct PdasSolution<S> {
    pub u: Vec<S>,
    /// Multiplier `rhs - A u`; zero on free and inactive nodes.
    pub mu: Vec<S>,
    pub active: Vec<bool>,
    pub iterations: usize,
}

/// Primal-dual active set method for
/// `A u + μ = rhs`, `μ_i = 0` on free nodes, `μ_i >= 0`, `u_i <= b_i`,
/// `μ_i (b_i - u_i) = 0` on upper-bounded nodes, `u_i = b_i` on fixed nodes.
///
/// `A` must be an M-matrix. Ties `μ_i + c(u_i - b_i) = 0` go to the inactive set.
pub fn pdas<S: Scalar>(
    matrix: &Tridiagonal<S>,
    rhs: &[S],
    constraints: &[Constraint<S>],
    c: S,
    max_iter: usize,
    initial_active: Option<&[bool]>,
) -> Result<PdasSolution<S>> {
    let n = matrix.dim();
    check_len(n, rhs.len())?;
    check_len(n, constraints.len())?;
    let mut active: Vec<bool> = match initial_active {
        Some(a) => {
            check_len(n, a.len())?;
            constraints
                .iter()
                .zip(a)
                .map(|(k, &a)| match k {
                    Constraint::Free => false,
                    Constraint::Upper(_) => a,
                    Constraint::Fixed(_) => true,
                })
                .collect()
        }
        None => constraints
            .iter()
            .map(|k| matches!(k, Constraint::Fixed(_)))
            .collect(),
    };
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    for it in 1..=max_iter.max(1) {
        let (u, mu) = pdas_step(matrix, rhs, constraints, &active)?;
        let next: Vec<bool> = constraints
            .iter()
            .enumerate()
            .map(|(i, k)| match *k {
                Constraint::Free => false,
                Constraint::Fixed(_) => true,
                Constraint::Upper(b) => mu[i] + c * (u[i] - b) > S::zero(),
            })
            .collect();
        if next == active || kkt_feasible(matrix, rhs, constraints, &u, &mu, &active) {
            return Ok(PdasSolution {
                u,
                mu,
                active,
                iterations: it,
            });
        }
        if !seen.insert(active.clone()) {
            return Err(QviError::Cycling {
                iterations: it,
                active: active.iter().filter(|&&a| a).count(),
            });
        }
        active = next;
    }
    Err(QviError::Cycling {
        iterations: max_iter,
        active: active.iter().filter(|&&a| a).count(),
    })
}

/// Primal feasibility on inactive nodes and dual feasibility on active ones,
/// up to rounding. Complementarity holds by construction, so this certifies
/// a solution even when degenerate ties keep the active set from settling.
fn kkt_feasible<S: Scalar>(
    matrix: &Tridiagonal<S>,
    rhs: &[S],
    constraints: &[Constraint<S>],
    u: &[S],
    mu: &[S],
    active: &[bool],
) -> bool {
    let a_inf = matrix.diag.iter().fold(S::zero(), |m, &d| m.max(d.abs())) * S::lit(2.0);
    let tol_mu = S::lit(64.0) * S::epsilon() * (max_abs(rhs) + a_inf * max_abs(u));
    constraints.iter().enumerate().all(|(i, k)| match *k {
        Constraint::Free | Constraint::Fixed(_) => true,
        Constraint::Upper(b) => {
            if active[i] {
                mu[i] >= -tol_mu
            } else {
                u[i] <= b + S::lit(64.0) * S::epsilon() * (S::one() + b.abs())
            }
        }
    })
}

/// Solves the linear system of one active-set guess.
fn pdas_step<S: Scalar>(
    matrix: &Tridiagonal<S>,
    rhs: &[S],
    constraints: &[Constraint<S>],
    active: &[bool],
) -> Result<(Vec<S>, Vec<S>)> {
    let n = matrix.dim();
    let mut sys = matrix.clone();
    let mut b = rhs.to_vec();
    for i in 0..n {
        if active[i] {
            let bound = match constraints[i] {
                Constraint::Upper(v) | Constraint::Fixed(v) => v,
                Constraint::Free => unreachable!("free nodes are never active"),
            };
            sys.diag[i] = S::one();
            if i > 0 {
                sys.lower[i - 1] = S::zero();
            }
            if i + 1 < n {
                sys.upper[i] = S::zero();
            }
            b[i] = bound;
        }
    }
    let u = sys.solve(&b)?;
    let au = matrix.mul_vec(&u)?;
    let mu = (0..n)
        .map(|i| if active[i] { rhs[i] - au[i] } else { S::zero() })
        .collect();
    Ok((u, mu))
}

/// `u = S(f, φ)` for a given upper obstacle `Φ(φ)`.
pub fn solve_s<S: Scalar>(
    space: &DiscreteSpace<S>,
    f: &DualField<S>,
    obstacle: &Field<S>,
    opts: &SolverOptions<S>,
) -> Result<SolveReport<S>> {
    let n = space.n_interior();
    check_len(n, f.len())?;
    check_len(n, obstacle.len())?;
    if !obstacle.is_finite() {
        return Err(QviError::NonFinite("obstacle"));
    }
    let constraints: Vec<Constraint<S>> = obstacle.iter().map(|&b| Constraint::Upper(b)).collect();
    let sol = pdas(
        space.stiffness(),
        f,
        &constraints,
        opts.pdas_c,
        opts.max_pdas,
        None,
    )?;
    let u = Field::raw(sol.u);
    let xi = DualField::raw(sol.mu);
    let final_residual = vi_residual(space, f, obstacle, &u, &xi)?;
    Ok(SolveReport {
        solution: u,
        iterations: sol.iterations,
        final_residual,
        xi,
        active_set: (0..n).filter(|&i| sol.active[i]).collect(),
    })
}

/// Largest violation among `Ku + ξ = f`, `ξ >= 0`, `u <= ψ`, `ξ_i(ψ_i - u_i) = 0`.
pub fn vi_residual<S: Scalar>(
    space: &DiscreteSpace<S>,
    f: &DualField<S>,
    obstacle: &Field<S>,
    u: &Field<S>,
    xi: &DualField<S>,
) -> Result<S> {
    let ku = space.apply_stiffness(u)?;
    let mut r = S::zero();
    for i in 0..u.len() {
        r = r
            .max((ku[i] + xi[i] - f[i]).abs())
            .max(pos(-xi[i]))
            .max(pos(u[i] - obstacle[i]))
            .max((xi[i] * (obstacle[i] - u[i])).abs());
    }
    Ok(r)
}

/// `F(u) = Ku + (1/ρ) M_L σ_ρ(u - ψ) - f`.
pub fn penalized_residual<S: Scalar>(
    space: &DiscreteSpace<S>,
    rho: S,
    f: &DualField<S>,
    obstacle: &Field<S>,
    u: &Field<S>,
) -> Result<Vec<S>> {
    let ku = space.stiffness().mul_vec(u)?;
    let inv = S::one() / rho;
    Ok((0..u.len())
        .map(|i| ku[i] + inv * space.mass_lumped()[i] * sigma(rho, u[i] - obstacle[i]) - f[i])
        .collect())
}

fn norm2<S: Scalar>(v: &[S]) -> S {
    v.iter().map(|&x| x * x).sum::<S>().sqrt()
}

/// `u = T_ρ(f, φ)` by damped Newton, with the obstacle `Φ(φ)` evaluated once.
pub fn solve_t_rho<S: Scalar>(
    space: &DiscreteSpace<S>,
    rho: S,
    f: &DualField<S>,
    phi: &Field<S>,
    map: &dyn ObstacleMap<S>,
    warm_start: Option<&Field<S>>,
    opts: &SolverOptions<S>,
) -> Result<SolveReport<S>> {
    check_len(space.n_interior(), phi.len())?;
    let obstacle = map.eval(phi)?;
    solve_t_rho_obstacle(space, rho, f, &obstacle, warm_start, opts)
}

/// [`solve_t_rho`] for an already evaluated obstacle.
pub fn solve_t_rho_obstacle<S: Scalar>(
    space: &DiscreteSpace<S>,
    rho: S,
    f: &DualField<S>,
    obstacle: &Field<S>,
    warm_start: Option<&Field<S>>,
    opts: &SolverOptions<S>,
) -> Result<SolveReport<S>> {
    let n = space.n_interior();
    check_len(n, f.len())?;
    check_len(n, obstacle.len())?;
    if !(rho > S::zero()) {
        return Err(QviError::Config(format!(
            "penalty parameter must be positive, got {rho}"
        )));
    }
    let mut u = match warm_start {
        Some(w) => {
            check_len(n, w.len())?;
            w.clone()
        }
        // The VI solution is within O(ρ) of the answer and costs one PDAS run.
        None => solve_s(space, f, obstacle, opts)?.solution,
    };
    let k = space.stiffness();
    let inv = S::one() / rho;
    let ml = space.mass_lumped();
    let f_inf = max_abs(f);
    let target = opts.newton_tol * (S::one() + f_inf);
    let k_inf = k.diag.iter().fold(S::zero(), |m, &d| m.max(d.abs())) * S::lit(2.0);
    // Rounding level of the residual: the stiffness part plus the penalty
    // part, whose argument u - ψ cancels to about eps (|u| + |ψ|).
    let floor_of = |u: &Field<S>| {
        let pen = (0..n).fold(S::zero(), |m, i| {
            let dp = inv * ml[i] * sigma_prime(rho, u[i] - obstacle[i]);
            m.max(dp * (u[i].abs() + obstacle[i].abs()))
        });
        S::lit(32.0) * S::epsilon() * (k_inf * u.max_abs() + f_inf + pen)
    };
    let accept = |u: &Field<S>| (S::tol_floor(1e-11, 1.0) * (S::one() + f_inf)).max(floor_of(u));

    let mut r = penalized_residual(space, rho, f, obstacle, &u)?;
    let mut history = vec![max_abs(&r).to_f64_lossy()];
    let mut iterations = 0;
    loop {
        let r_inf = max_abs(&r);
        if r_inf <= target {
            break;
        }
        if iterations == opts.max_newton {
            if r_inf <= accept(&u) {
                break;
            }
            return Err(QviError::NoConvergence {
                solver: "penalized Newton",
                iterations,
                residual: r_inf.to_f64_lossy(),
                history,
            });
        }
        iterations += 1;
        let d: Vec<S> = (0..n)
            .map(|i| inv * ml[i] * sigma_prime(rho, u[i] - obstacle[i]))
            .collect();
        let jac = k.add_diagonal(&d)?;
        let step = jac.solve(&r)?;
        let r_norm = norm2(&r);
        let mut lambda = S::one();
        let mut accepted = false;
        while lambda >= S::lit(1e-12) {
            let trial = u.zip_map(&Field::raw(step.clone()), |a, s| a - lambda * s);
            let tr = penalized_residual(space, rho, f, obstacle, &trial)?;
            if norm2(&tr) <= (S::one() - opts.armijo_slope * lambda) * r_norm {
                u = trial;
                r = tr;
                accepted = true;
                break;
            }
            lambda *= opts.armijo_factor;
        }
        history.push(max_abs(&r).to_f64_lossy());
        if !accepted {
            // No descent left: either at the rounding floor or stuck.
            if max_abs(&r) <= accept(&u) {
                break;
            }
            return Err(QviError::NoConvergence {
                solver: "penalized Newton",
                iterations,
                residual: max_abs(&r).to_f64_lossy(),
                history,
            });
        }
    }
    let xi = DualField::raw(
        (0..n)
            .map(|i| inv * ml[i] * sigma(rho, u[i] - obstacle[i]))
            .collect(),
    );
    let active_set = (0..n).filter(|&i| u[i] > obstacle[i]).collect();
    Ok(SolveReport {
        final_residual: max_abs(&r),
        solution: u,
        iterations,
        xi,
        active_set,
    })
}
