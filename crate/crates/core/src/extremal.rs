//! Minimal and maximal solutions by monotone fixed-point iteration, the
//! `ρ ↘ 0` continuation, and the Lipschitz probe of the extremal maps.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, QviError, Result};
use crate::fem::{order_violation, DiscreteSpace, DualField, Field, TOL_ORD};
use crate::obstacle::ObstacleMap;
use crate::penalty::sigma_field;
use crate::scalar::Scalar;
use crate::vi::{solve_s, solve_t_rho_obstacle, SolveReport, SolverOptions};

/// Which extremal solution to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Min,
    Max,
}

impl std::str::FromStr for Branch {
    type Err = QviError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(Branch::Min),
            "max" => Ok(Branch::Max),
            other => Err(QviError::Config(format!(
                "unknown branch {other:?} (expected min or max)"
            ))),
        }
    }
}

/// Slack beyond [`TOL_ORD`] up to which failed certificates only warn.
pub const CERT_WARN: f64 = 1e-8;

/// `[sub, sup]` with the admissible source set `W = {0 <= g <= F}` when built
/// from a bound.
#[derive(Debug, Clone, Serialize)]
pub struct OrderInterval<S> {
    pub sub: Field<S>,
    pub sup: Field<S>,
    /// Upper end `F` of the admissible loads, if any.
    pub bound: Option<DualField<S>>,
    /// Largest penalty parameter the supersolution certificate was checked for.
    pub rho0: S,
    /// `max (sub - S(0, sub))^+`.
    pub sub_violation: S,
    /// `max (T_ρ₀(F, sup) - sup)^+`.
    pub sup_violation: S,
    pub warnings: Vec<String>,
}

impl<S: Scalar> OrderInterval<S> {
    /// An explicit interval without certificates; callers take responsibility.
    pub fn unchecked(sub: Field<S>, sup: Field<S>, rho0: S) -> Result<Self> {
        check_len(sub.len(), sup.len())?;
        if order_violation(&sub, &sup) > S::lit(TOL_ORD) {
            return Err(QviError::Config(
                "interval endpoints are not ordered".into(),
            ));
        }
        Ok(Self {
            sub,
            sup,
            bound: None,
            rho0,
            sub_violation: S::zero(),
            sup_violation: S::zero(),
            warnings: Vec::new(),
        })
    }

    /// Nodewise membership `0 <= f <= F` on load vectors.
    pub fn admits(&self, f: &DualField<S>) -> bool {
        let tol = S::lit(TOL_ORD);
        match &self.bound {
            None => true,
            Some(b) => {
                f.len() == b.len()
                    && f.iter()
                        .zip(b.iter())
                        .all(|(&g, &bb)| g >= -tol && g <= bb + tol)
            }
        }
    }
}

/// `sub = 0`, `sup = K⁻¹F`, with both certificates evaluated at the extreme
/// loads of `W` (`0` for the subsolution, `F` for the supersolution), which
/// covers all of `W` by monotonicity.
pub fn make_interval_from_bound<S: Scalar>(
    space: &DiscreteSpace<S>,
    bound: &DualField<S>,
    map: &dyn ObstacleMap<S>,
    rho0: S,
    opts: &SolverOptions<S>,
) -> Result<OrderInterval<S>> {
    check_len(space.n_interior(), bound.len())?;
    if bound.iter().any(|&b| b < S::zero()) {
        return Err(QviError::Config("bound F must be nonnegative".into()));
    }
    let sub = space.zeros();
    let sup = space.solve_stiffness(bound)?;
    let s_sub = solve_s(space, &space.dual_zeros(), &map.eval(&sub)?, opts)?.solution;
    let sub_violation = order_violation(&sub, &s_sub);
    let t_sup =
        solve_t_rho_obstacle(space, rho0, bound, &map.eval(&sup)?, Some(&sup), opts)?.solution;
    let sup_violation = order_violation(&t_sup, &sup);
    let mut warnings = Vec::new();
    for (name, v) in [
        ("sub <= S(g, sub)", sub_violation),
        ("sup >= T_rho0(g, sup)", sup_violation),
    ] {
        if v > S::lit(CERT_WARN) {
            return Err(QviError::Config(format!(
                "certificate {name} violated by {v:e}"
            )));
        }
        if v > S::lit(TOL_ORD) {
            warnings.push(format!("certificate {name} violated marginally ({v:e})"));
        }
    }
    Ok(OrderInterval {
        sub,
        sup,
        bound: Some(bound.clone()),
        rho0,
        sub_violation,
        sup_violation,
        warnings,
    })
}

/// Controls for [`iterate_extremal`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremalOptions<S> {
    /// Stop once successive iterates are this close in the V-norm.
    pub tol_fp: S,
    pub max_n: usize,
    pub tol_ord: S,
    pub solver: SolverOptions<S>,
    /// Keep every iterate in the result.
    pub keep_iterates: bool,
}

impl<S: Scalar> Default for ExtremalOptions<S> {
    fn default() -> Self {
        Self {
            tol_fp: S::tol_floor(1e-9, 1e3),
            max_n: 200,
            tol_ord: S::tol_floor(TOL_ORD, 1e3),
            solver: SolverOptions::default(),
            keep_iterates: false,
        }
    }
}

impl<S: Scalar> ExtremalOptions<S> {
    /// Fixed points to near rounding level, for difference quotients.
    pub fn tight() -> Self {
        Self {
            tol_fp: S::tol_floor(1e-13, 1e3),
            max_n: 400,
            solver: SolverOptions::tight(),
            ..Self::default()
        }
    }
}

/// An extremal fixed point of `T_ρ(f, ·)` (or of `S(f, ·)` when `rho == 0`).
#[derive(Debug, Clone, Serialize)]
pub struct ExtremalResult<S> {
    pub branch: Branch,
    pub solution: Field<S>,
    pub rho: S,
    /// `(n, |u^n - u^{n-1}|_V)`.
    pub iterate_history: Vec<(usize, S)>,
    /// `|u - T_ρ(f, u)|_V`.
    pub fixed_point_residual: S,
    pub monotone: bool,
    /// `f - Ku` for `ρ = 0`, `(1/ρ) M_L σ_ρ(u - Φu)` otherwise.
    pub xi: DualField<S>,
    /// `Φ(u)` at the returned solution.
    pub obstacle: Field<S>,
    #[serde(skip)]
    pub iterates: Vec<Field<S>>,
}

fn inner_solve<S: Scalar>(
    space: &DiscreteSpace<S>,
    rho: S,
    f: &DualField<S>,
    obstacle: &Field<S>,
    warm: Option<&Field<S>>,
    opts: &SolverOptions<S>,
) -> Result<SolveReport<S>> {
    if rho == S::zero() {
        solve_s(space, f, obstacle, opts)
    } else {
        solve_t_rho_obstacle(space, rho, f, obstacle, warm, opts)
    }
}

/// Geometric mean of the last few contraction ratios of a difference history.
fn rate_estimate<S: Scalar>(history: &[(usize, S)]) -> f64 {
    let d: Vec<f64> = history
        .iter()
        .map(|&(_, v)| v.to_f64_lossy())
        .filter(|v| *v > 0.0)
        .collect();
    if d.len() < 2 {
        return f64::NAN;
    }
    let k = (d.len() - 1).min(5);
    let tail = &d[d.len() - 1 - k..];
    (tail[k] / tail[0]).powf(1.0 / k as f64)
}

/// `u^n = T_ρ(f, u^{n-1})` from `sup` (MAX) or `sub` (MIN).
pub fn iterate_extremal<S: Scalar>(
    space: &DiscreteSpace<S>,
    rho: S,
    f: &DualField<S>,
    interval: &OrderInterval<S>,
    branch: Branch,
    map: &dyn ObstacleMap<S>,
    opts: &ExtremalOptions<S>,
) -> Result<ExtremalResult<S>> {
    let start = match branch {
        Branch::Min => &interval.sub,
        Branch::Max => &interval.sup,
    };
    iterate_from(space, rho, f, interval, branch, map, start, opts)
}

/// [`iterate_extremal`] started from an explicit point, which must be a
/// sub- (MIN) or supersolution (MAX) of `T_ρ(f, ·)` inside the interval.
#[allow(clippy::too_many_arguments)]
pub fn iterate_from<S: Scalar>(
    space: &DiscreteSpace<S>,
    rho: S,
    f: &DualField<S>,
    interval: &OrderInterval<S>,
    branch: Branch,
    map: &dyn ObstacleMap<S>,
    start: &Field<S>,
    opts: &ExtremalOptions<S>,
) -> Result<ExtremalResult<S>> {
    check_len(space.n_interior(), f.len())?;
    check_len(space.n_interior(), start.len())?;
    if rho < S::zero() || rho > interval.rho0 {
        return Err(QviError::Config(format!(
            "rho = {rho} outside [0, {}] covered by the interval certificates",
            interval.rho0
        )));
    }
    if !interval.admits(f) {
        return Err(QviError::Config(
            "source lies outside the admissible set 0 <= f <= F".into(),
        ));
    }
    let mut u = start.clone();
    let mut obstacle = map.eval(&u)?;
    let mut report = inner_solve(space, rho, f, &obstacle, Some(&u), &opts.solver)?;
    let mut history = Vec::new();
    let mut iterates = if opts.keep_iterates {
        vec![u.clone()]
    } else {
        Vec::new()
    };
    let mut monotone = true;
    let mut converged_once = false;
    for n in 1..=opts.max_n {
        let next = report.solution.clone();
        let diff = space.v_dist(&next, &u)?;
        let violation = match branch {
            Branch::Max => order_violation(&next, &u),
            Branch::Min => order_violation(&u, &next),
        };
        if violation > opts.tol_ord {
            monotone = false;
        }
        history.push((n, diff));
        if opts.keep_iterates {
            iterates.push(next.clone());
        }
        if converged_once && diff <= opts.tol_fp {
            // `diff` is the residual |u - T(f, u)|_V of the current iterate.
            if opts.keep_iterates {
                iterates.pop();
            }
            history.pop();
            let xi = multiplier(space, rho, f, &u, &obstacle)?;
            return Ok(ExtremalResult {
                branch,
                solution: u,
                rho,
                iterate_history: history,
                fixed_point_residual: diff,
                monotone,
                xi,
                obstacle,
                iterates,
            });
        }
        converged_once = diff <= opts.tol_fp;
        u = next;
        obstacle = map.eval(&u)?;
        let warm = report.solution.clone();
        report = inner_solve(space, rho, f, &obstacle, Some(&warm), &opts.solver)?;
    }
    let last = history
        .last()
        .map(|&(_, d)| d.to_f64_lossy())
        .unwrap_or(f64::NAN);
    Err(QviError::FixedPoint {
        iterations: opts.max_n,
        last_difference: last,
        rate: rate_estimate(&history),
    })
}

/// `f - Ku` for `ρ = 0`, `(1/ρ) M_L σ_ρ(u - Φ(u))` otherwise.
pub fn multiplier<S: Scalar>(
    space: &DiscreteSpace<S>,
    rho: S,
    f: &DualField<S>,
    u: &Field<S>,
    obstacle: &Field<S>,
) -> Result<DualField<S>> {
    if rho == S::zero() {
        Ok(f - &space.apply_stiffness(u)?)
    } else {
        Ok(sigma_field(space, rho, &(u - obstacle))? * (S::one() / rho))
    }
}

/// Outcome of a continuation run.
#[derive(Debug, Clone, Serialize)]
pub struct Continuation<S> {
    pub results: Vec<ExtremalResult<S>>,
    /// The `ρ = 0` solution the errors are measured against.
    pub reference: ExtremalResult<S>,
    /// `(ρ_k, |Z_{ρ_k}(f) - Z(f)|_V)`.
    pub errors: Vec<(S, S)>,
}

impl<S: Scalar> Continuation<S> {
    /// Errors are nonincreasing in `k`, allowing `slack` relative growth at the
    /// final step where discretization error dominates.
    pub fn errors_nonincreasing(&self, slack: S) -> bool {
        let m = self.errors.len();
        self.errors.windows(2).enumerate().all(|(k, w)| {
            let allow = if k + 2 == m {
                S::one() + slack
            } else {
                S::one()
            };
            w[1].1 <= w[0].1 * allow + S::epsilon()
        })
    }
}

/// `ρ_k = ρ₀ 2^{-k}`, `k = 0..steps`.
pub fn halving_schedule<S: Scalar>(rho0: S, steps: usize) -> Vec<S> {
    (0..steps)
        .map(|k| rho0 * S::lit(0.5f64.powi(k as i32)))
        .collect()
}

/// Extremal solutions along a strictly decreasing `ρ` schedule, followed by
/// the `ρ = 0` reference.
///
/// The MAX branch restarts each level from the previous `M_κ`, a
/// supersolution of `T_ρ(f, ·)` for `ρ <= κ`; the MIN branch restarts from
/// `sub`, since `m_κ` is not a subsolution for smaller `ρ`.
pub fn rho_continuation<S: Scalar>(
    space: &DiscreteSpace<S>,
    f: &DualField<S>,
    interval: &OrderInterval<S>,
    branch: Branch,
    map: &dyn ObstacleMap<S>,
    rho_schedule: &[S],
    opts: &ExtremalOptions<S>,
) -> Result<Continuation<S>> {
    if rho_schedule.windows(2).any(|w| !(w[1] < w[0]))
        || rho_schedule.iter().any(|&r| !(r > S::zero()))
    {
        return Err(QviError::Config(
            "rho schedule must be positive and strictly decreasing".into(),
        ));
    }
    let mut results: Vec<ExtremalResult<S>> = Vec::with_capacity(rho_schedule.len());
    for &rho in rho_schedule {
        let start = match (branch, results.last()) {
            (Branch::Max, Some(prev)) => prev.solution.clone(),
            (Branch::Max, None) => interval.sup.clone(),
            (Branch::Min, _) => interval.sub.clone(),
        };
        results.push(iterate_from(
            space, rho, f, interval, branch, map, &start, opts,
        )?);
    }
    let reference = iterate_extremal(space, S::zero(), f, interval, branch, map, opts)?;
    let errors = results
        .iter()
        .map(|r| Ok((r.rho, space.v_dist(&r.solution, &reference.solution)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Continuation {
        results,
        reference,
        errors,
    })
}

/// Constants of the contraction estimate
/// `|T_ρ(f,φ) - T_ρ(g,ψ)|_V <= Ĉ|f - g|_{V*} + ĉ|φ - ψ|_V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionConstants<S> {
    /// `true` for the self-adjoint branch of the smallness condition.
    pub self_adjoint_case: bool,
    pub c: S,
    pub c_tilde: S,
    pub c_hat_big: S,
    pub c_hat: S,
}

impl<S: Scalar> ContractionConstants<S> {
    /// `Ĉ/(1 - ĉ)`: Lipschitz constant of the extremal maps.
    pub fn bound(&self) -> S {
        self.c_hat_big / (S::one() - self.c_hat)
    }
}

fn constants_from<S: Scalar>(
    c: S,
    c_tilde: S,
    cl_over_ct: S,
    self_adjoint_case: bool,
) -> ContractionConstants<S> {
    let one = S::one();
    let two = S::lit(2.0);
    let ct2 = c_tilde * c_tilde;
    let c_hat_big = (two / (c * (one + ct2))).sqrt()
        * (one / (two * c * (one - ct2)).sqrt() + cl_over_ct / (two * c.sqrt()));
    ContractionConstants {
        self_adjoint_case,
        c,
        c_tilde,
        c_hat_big,
        c_hat: c_tilde * (two / (one + ct2)).sqrt(),
    }
}

/// Contraction constants for coercivity `C_a`, boundedness `C_b` and obstacle
/// Lipschitz constant `C_L`; `None` when neither smallness condition holds.
/// When both hold the smaller resulting bound is returned.
pub fn contraction_constants<S: Scalar>(
    ca: S,
    cb: S,
    cl: S,
    self_adjoint: bool,
) -> Option<ContractionConstants<S>> {
    let two = S::lit(2.0);
    let mut best: Option<ContractionConstants<S>> = None;
    if cl < ca / cb {
        let c_tilde = cb * cl / ca;
        let ratio = if c_tilde > S::zero() {
            cl / c_tilde
        } else {
            ca / cb
        };
        best = Some(constants_from(ca / two, c_tilde, ratio, false));
    }
    let q = cb / ca;
    if self_adjoint && cl < two * q.sqrt() / (S::one() + q) {
        let root = (ca * cb).sqrt();
        let c_tilde = (ca + cb) * cl / (two * root);
        let ratio = if c_tilde > S::zero() {
            cl / c_tilde
        } else {
            two * root / (ca + cb)
        };
        let cand = constants_from(ca * cb / (ca + cb), c_tilde, ratio, true);
        if best.is_none_or(|b| cand.bound() < b.bound()) {
            best = Some(cand);
        }
    }
    best
}

/// Constants of `|T_ρ(f,φ) - T_ρ(g,ψ)|_V <= a|f - g|_{V*} + b|Φψ - Φφ|_V`.
pub fn t_rho_lipschitz<S: Scalar>(ca: S, cb: S) -> (S, S) {
    let r2 = S::lit(2.0).sqrt();
    (r2 / ca, r2 * cb / ca)
}

/// Result of [`lipschitz_probe`].
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport<S> {
    pub ratios: Vec<S>,
    pub max_ratio: S,
    /// Estimated `C_L` on a ball containing all computed solutions.
    pub c_l: S,
    pub constants: Option<ContractionConstants<S>>,
    /// `Ĉ/(1 - ĉ)`, infinite when no smallness condition holds.
    pub bound: S,
    pub skipped: usize,
    pub violated: bool,
}

/// Ratios `|Z(f) - Z(g)|_V / |f - g|_{V*}` for `g = f + δ` over the given
/// perturbations, against the theoretical bound.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_probe<S: Scalar>(
    space: &DiscreteSpace<S>,
    f: &DualField<S>,
    perturbations: &[DualField<S>],
    rho: S,
    branch: Branch,
    interval: &OrderInterval<S>,
    map: &dyn ObstacleMap<S>,
    opts: &ExtremalOptions<S>,
) -> Result<LipschitzReport<S>> {
    let base = iterate_extremal(space, rho, f, interval, branch, map, opts)?;
    let mut ratios = Vec::new();
    let mut skipped = 0;
    let mut radius = S::zero();
    for d in perturbations {
        let g = f + d;
        if !interval.admits(&g) {
            return Err(QviError::Config(
                "perturbed source leaves the admissible set".into(),
            ));
        }
        let den = space.dual_norm(d)?;
        if den == S::zero() {
            skipped += 1;
            continue;
        }
        let zg = iterate_extremal(space, rho, &g, interval, branch, map, opts)?;
        let num = space.v_dist(&zg.solution, &base.solution)?;
        radius = radius.max(num);
        ratios.push(num / den);
    }
    let c_l = map.lipschitz_estimate(&base.solution, radius * S::lit(1.01) + S::lit(1e-12))?;
    let constants = contraction_constants(
        space.coercivity(),
        space.boundedness(),
        c_l,
        space.self_adjoint(),
    );
    let bound = constants.map_or(S::infinity(), |c| c.bound());
    let max_ratio = ratios.iter().fold(S::zero(), |m, &r| m.max(r));
    Ok(LipschitzReport {
        violated: max_ratio > bound,
        ratios,
        max_ratio,
        c_l,
        constants,
        bound,
        skipped,
    })
}
