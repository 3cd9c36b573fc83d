//! Directional derivatives of the extremal maps: the linearized penalized
//! equation for `Z_ρ`, the derivative QVI on the critical cone for `Z`, and
//! difference-quotient verification.

use serde::Serialize;

use crate::error::{check_len, QviError, Result};
use crate::extremal::{iterate_extremal, Branch, ExtremalOptions, OrderInterval};
use crate::fem::{DiscreteSpace, DualField, Field};
use crate::obstacle::ObstacleMap;
use crate::penalty::sigma_prime_diag;
use crate::scalar::{pos, Scalar};
use crate::vi::{pdas, Constraint, SolverOptions};

/// Tolerances of the derivative solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeOptions<S> {
    /// Successive V-difference at which the outer fixed point stops.
    pub tol: S,
    pub max_iter: usize,
    /// `u_i >= Φ(u)_i - tol_act` marks a contact node.
    pub tol_act: S,
    /// Contact nodes whose multiplier density exceeds this are strongly active.
    pub tol_mult: S,
    pub solver: SolverOptions<S>,
}

impl<S: Scalar> Default for DerivativeOptions<S> {
    fn default() -> Self {
        Self {
            tol: S::tol_floor(1e-10, 1e3),
            max_iter: 500,
            tol_act: S::tol_floor(1e-7, 1e3),
            tol_mult: S::tol_floor(1e-7, 1e3),
            solver: SolverOptions::default(),
        }
    }
}

/// Nodal decomposition of the critical cone at a solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalConeSpec<S> {
    pub strongly_active: Vec<usize>,
    pub biactive: Vec<usize>,
    pub inactive: Vec<usize>,
    /// `Φ'(u)(α)` for the current outer iterate.
    pub shift: Field<S>,
}

impl<S: Scalar> CriticalConeSpec<S> {
    /// Splits the nodes by contact (`u >= Φ(u) - tol_act`) and multiplier
    /// density `ξ_i / (M_L)_ii` against `tol_mult`. Biactive ties count as
    /// biactive, never as strongly active.
    pub fn classify(
        space: &DiscreteSpace<S>,
        u: &Field<S>,
        obstacle: &Field<S>,
        xi: &DualField<S>,
        tol_act: S,
        tol_mult: S,
    ) -> Result<Self> {
        let n = space.n_interior();
        check_len(n, u.len())?;
        check_len(n, obstacle.len())?;
        check_len(n, xi.len())?;
        let density = space.density(xi);
        let mut spec = Self {
            strongly_active: Vec::new(),
            biactive: Vec::new(),
            inactive: Vec::new(),
            shift: space.zeros(),
        };
        for i in 0..n {
            if density[i] > tol_mult {
                spec.strongly_active.push(i);
            } else if u[i] >= obstacle[i] - tol_act {
                spec.biactive.push(i);
            } else {
                spec.inactive.push(i);
            }
        }
        Ok(spec)
    }

    fn constraints(&self, n: usize) -> Vec<Constraint<S>> {
        let mut c = vec![Constraint::Free; n];
        for &i in &self.strongly_active {
            c[i] = Constraint::Fixed(self.shift[i]);
        }
        for &i in &self.biactive {
            c[i] = Constraint::Upper(self.shift[i]);
        }
        c
    }

    /// `w = shift` on strongly active nodes, `w <= shift` on biactive ones.
    pub fn contains(&self, w: &Field<S>, tol: S) -> bool {
        self.strongly_active
            .iter()
            .all(|&i| (w[i] - self.shift[i]).abs() <= tol)
            && self.biactive.iter().all(|&i| w[i] <= self.shift[i] + tol)
    }
}

/// A computed directional derivative.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeResult<S> {
    pub direction: DualField<S>,
    pub alpha: Field<S>,
    pub fixed_point_iters: usize,
    /// Residual of the defining equation or VI (sup-norm).
    pub residual: S,
    /// `(s, |(Z(f + s d) - Z(f))/s - α|_V)`, filled by [`fd_errors`].
    pub fd_errors: Vec<(S, S)>,
    /// Cone used in the last outer step (derivative QVI only).
    pub cone: Option<CriticalConeSpec<S>>,
}

fn check_contraction<S: Scalar>(diffs: &[S], map: &dyn ObstacleMap<S>, u: &Field<S>) -> Result<()> {
    let k = diffs.len();
    // Three consecutive increases beyond rounding mean the iteration diverges.
    if k >= 4
        && diffs[k - 3..]
            .iter()
            .zip(&diffs[k - 4..k - 1])
            .all(|(&b, &a)| b > a * S::lit(1.0 + 1e-6) && b > S::lit(1e3) * S::epsilon())
    {
        return Err(QviError::NotContracting {
            difference: diffs[k - 1].to_f64_lossy(),
            lipschitz: map.lipschitz_estimate(u, S::zero())?.to_f64_lossy(),
        });
    }
    Ok(())
}

/// `α = Z_ρ'(f)(d)`: the solution of
/// `Kα + (1/ρ) D (α - Φ'(u)α) = d` with `D = M_L σ'_ρ(u - Φ(u))`, by the
/// contraction `(K + D/ρ) α_n = d + (D/ρ) Φ'(u) α_{n-1}`.
pub fn deriv_z_rho<S: Scalar>(
    space: &DiscreteSpace<S>,
    rho: S,
    u: &Field<S>,
    d: &DualField<S>,
    map: &dyn ObstacleMap<S>,
    opts: &DerivativeOptions<S>,
) -> Result<DerivativeResult<S>> {
    let n = space.n_interior();
    check_len(n, u.len())?;
    check_len(n, d.len())?;
    if !(rho > S::zero()) {
        return Err(QviError::Config(format!(
            "penalty parameter must be positive, got {rho}"
        )));
    }
    let obstacle = map.eval(u)?;
    let inv = S::one() / rho;
    let dg: Vec<S> = sigma_prime_diag(space, rho, &(u - &obstacle))?
        .into_iter()
        .map(|v| v * inv)
        .collect();
    let jac = space.stiffness().add_diagonal(&dg)?;
    let g = if map.is_constant() || dg.iter().all(|&v| v == S::zero()) {
        None
    } else {
        Some(map.deriv_matrix(u)?)
    };
    let mut alpha = space.zeros();
    let mut diffs = Vec::new();
    let mut iters = 0;
    loop {
        iters += 1;
        let mut rhs = d.to_vec();
        if let Some(g) = &g {
            let ga = g.mul_vec(&alpha)?;
            for i in 0..n {
                rhs[i] += dg[i] * ga[i];
            }
        }
        let next = Field::raw(jac.solve(&rhs)?);
        let diff = space.v_dist(&next, &alpha)?;
        alpha = next;
        diffs.push(diff);
        if g.is_none() || diff <= opts.tol * (S::one() + space.v_norm(&alpha)?) {
            break;
        }
        check_contraction(&diffs, map, u)?;
        if iters >= opts.max_iter {
            return Err(QviError::FixedPoint {
                iterations: iters,
                last_difference: diff.to_f64_lossy(),
                rate: last_ratio(&diffs),
            });
        }
    }
    let ga = match &g {
        Some(g) => g.mul_vec(&alpha)?,
        None => vec![S::zero(); n],
    };
    let ka = space.stiffness().mul_vec(&alpha)?;
    let residual = (0..n).fold(S::zero(), |m, i| {
        m.max((ka[i] + dg[i] * (alpha[i] - ga[i]) - d[i]).abs())
    });
    Ok(DerivativeResult {
        direction: d.clone(),
        alpha,
        fixed_point_iters: iters,
        residual,
        fd_errors: Vec::new(),
        cone: None,
    })
}

fn last_ratio<S: Scalar>(d: &[S]) -> f64 {
    match d {
        [.., a, b] if *a > S::zero() => (*b / *a).to_f64_lossy(),
        _ => f64::NAN,
    }
}

/// `α = Z'(f)(d)`: the solution of the derivative QVI
/// `α ∈ K^u(α)`, `<Kα - d, α - v> <= 0` for all `v ∈ K^u(α)`, by the outer
/// fixed point over the cone shift `Φ'(u)(α_{n-1})` with an active-set inner
/// solve.
pub fn deriv_z<S: Scalar>(
    space: &DiscreteSpace<S>,
    u: &Field<S>,
    xi: &DualField<S>,
    d: &DualField<S>,
    map: &dyn ObstacleMap<S>,
    opts: &DerivativeOptions<S>,
) -> Result<DerivativeResult<S>> {
    let n = space.n_interior();
    check_len(n, d.len())?;
    let obstacle = map.eval(u)?;
    let mut cone =
        CriticalConeSpec::classify(space, u, &obstacle, xi, opts.tol_act, opts.tol_mult)?;
    let g = if map.is_constant() || (cone.strongly_active.is_empty() && cone.biactive.is_empty()) {
        None
    } else {
        Some(map.deriv_matrix(u)?)
    };
    let mut alpha = space.zeros();
    let mut active: Option<Vec<bool>> = None;
    let mut diffs = Vec::new();
    let mut iters = 0;
    loop {
        iters += 1;
        if let Some(g) = &g {
            cone.shift = Field::raw(g.mul_vec(&alpha)?);
        }
        let sol = pdas(
            space.stiffness(),
            d,
            &cone.constraints(n),
            opts.solver.pdas_c,
            opts.solver.max_pdas,
            active.as_deref(),
        )?;
        let next = Field::raw(sol.u);
        active = Some(sol.active);
        let diff = space.v_dist(&next, &alpha)?;
        alpha = next;
        diffs.push(diff);
        if g.is_none() || diff <= opts.tol * (S::one() + space.v_norm(&alpha)?) {
            break;
        }
        check_contraction(&diffs, map, u)?;
        if iters >= opts.max_iter {
            return Err(QviError::FixedPoint {
                iterations: iters,
                last_difference: diff.to_f64_lossy(),
                rate: last_ratio(&diffs),
            });
        }
    }
    // Residual against the cone of the returned α itself.
    if let Some(g) = &g {
        cone.shift = Field::raw(g.mul_vec(&alpha)?);
    }
    let residual = cone_vi_residual(space, &cone, d, &alpha)?;
    Ok(DerivativeResult {
        direction: d.clone(),
        alpha,
        fixed_point_iters: iters,
        residual,
        fd_errors: Vec::new(),
        cone: Some(cone),
    })
}

/// Largest violation of `Kα + μ = d` with `μ = 0` off the contact set,
/// `α = shift` on strongly active nodes, and `μ >= 0`, `α <= shift`,
/// `μ(shift - α) = 0` on biactive nodes.
pub fn cone_vi_residual<S: Scalar>(
    space: &DiscreteSpace<S>,
    cone: &CriticalConeSpec<S>,
    d: &DualField<S>,
    alpha: &Field<S>,
) -> Result<S> {
    let ka = space.stiffness().mul_vec(alpha)?;
    let mut r = S::zero();
    for &i in &cone.inactive {
        r = r.max((ka[i] - d[i]).abs());
    }
    for &i in &cone.strongly_active {
        r = r.max((alpha[i] - cone.shift[i]).abs());
    }
    for &i in &cone.biactive {
        let m = d[i] - ka[i];
        r = r
            .max(pos(-m))
            .max(pos(alpha[i] - cone.shift[i]))
            .max((m * (cone.shift[i] - alpha[i])).abs());
    }
    Ok(r)
}

/// `(s, |(Z(f + s d) - Z(f))/s - α|_V)` for each step, with `Z` the extremal
/// map of the given branch at penalty `rho` (`0` for the QVI).
#[allow(clippy::too_many_arguments)]
pub fn fd_errors<S: Scalar>(
    space: &DiscreteSpace<S>,
    rho: S,
    f: &DualField<S>,
    d: &DualField<S>,
    base: &Field<S>,
    alpha: &Field<S>,
    steps: &[S],
    interval: &OrderInterval<S>,
    branch: Branch,
    map: &dyn ObstacleMap<S>,
    opts: &ExtremalOptions<S>,
) -> Result<Vec<(S, S)>> {
    steps
        .iter()
        .map(|&s| {
            let g = f.axpy(s, d);
            let z = iterate_extremal(space, rho, &g, interval, branch, map, opts)?;
            let q = &(&z.solution - base) * (S::one() / s);
            Ok((s, space.v_dist(&q, alpha)?))
        })
        .collect()
}

/// Each decade of `s` shrinks the error by at least `factor` until `floor`.
pub fn fd_converges<S: Scalar>(errors: &[(S, S)], factor: S, floor: S) -> bool {
    errors
        .windows(2)
        .all(|w| w[0].1 <= floor || w[1].1 <= floor || w[1].1 <= factor * w[0].1)
}

/// Quotient errors along a perturbed-direction sequence `d_k → d`.
#[derive(Debug, Clone, Serialize)]
pub struct HadamardReport<S> {
    pub steps: Vec<S>,
    /// Errors for the fixed direction `d`.
    pub fixed: Vec<S>,
    /// Errors for `d_k`, measured against the same `α = Z'(f)(d)`.
    pub perturbed: Vec<S>,
    /// `|d_k - d|_{V*}`.
    pub direction_gaps: Vec<S>,
    /// Lipschitz constant of the extremal map used to absorb the direction gap.
    pub lipschitz: S,
    pub pass: bool,
}

/// Passes when, at every step, the perturbed error stays within 10% of the
/// fixed-direction error plus `L |d_k - d|_{V*}`: difference quotients of a
/// map with Lipschitz constant `L` cannot separate faster than that.
#[allow(clippy::too_many_arguments)]
pub fn hadamard_check<S: Scalar>(
    space: &DiscreteSpace<S>,
    rho: S,
    f: &DualField<S>,
    d: &DualField<S>,
    directions: &[DualField<S>],
    steps: &[S],
    base: &Field<S>,
    alpha: &Field<S>,
    lipschitz: S,
    interval: &OrderInterval<S>,
    branch: Branch,
    map: &dyn ObstacleMap<S>,
    opts: &ExtremalOptions<S>,
) -> Result<HadamardReport<S>> {
    if directions.len() != steps.len() {
        return Err(QviError::DimensionMismatch {
            expected: steps.len(),
            got: directions.len(),
        });
    }
    for (dk, &s) in directions.iter().zip(steps) {
        if !interval.admits(&f.axpy(s, dk)) || !interval.admits(&f.axpy(s, d)) {
            return Err(QviError::Config(format!(
                "perturbation at step {s} leaves the admissible set"
            )));
        }
    }
    let fixed: Vec<S> = fd_errors(
        space, rho, f, d, base, alpha, steps, interval, branch, map, opts,
    )?
    .into_iter()
    .map(|(_, e)| e)
    .collect();
    let mut perturbed = Vec::with_capacity(steps.len());
    let mut gaps = Vec::with_capacity(steps.len());
    for (dk, &s) in directions.iter().zip(steps) {
        let z = iterate_extremal(space, rho, &f.axpy(s, dk), interval, branch, map, opts)?;
        let q = &(&z.solution - base) * (S::one() / s);
        perturbed.push(space.v_dist(&q, alpha)?);
        gaps.push(space.dual_norm(&(dk - d))?);
    }
    let pass = (0..steps.len()).all(|k| {
        perturbed[k] <= S::lit(1.1) * fixed[k] + lipschitz * gaps[k] + S::lit(1e3) * S::epsilon()
    });
    Ok(HadamardReport {
        steps: steps.to_vec(),
        fixed,
        perturbed,
        direction_gaps: gaps,
        lipschitz,
        pass,
    })
}
