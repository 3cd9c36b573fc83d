//! Obstacle maps `Φ`: evaluation, directional derivative and local Lipschitz
//! metadata.

use std::fmt::Debug;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, QviError, Result};
use crate::fem::{max_abs, DiscreteSpace, DualField, Field};
use crate::linalg::{DenseMatrix, Tridiagonal};
use crate::scalar::Scalar;

/// An increasing map `Φ: V_h → V_h`.
pub trait ObstacleMap<S: Scalar>: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Number of interior nodes the map acts on.
    fn dim(&self) -> usize;

    fn eval(&self, u: &Field<S>) -> Result<Field<S>>;

    /// `Φ'(u)(h)`.
    fn deriv(&self, u: &Field<S>, h: &Field<S>) -> Result<Field<S>>;

    fn deriv_is_linear(&self) -> bool;

    /// Upper estimate of the Lipschitz constant of `Φ` (V to V) on the ball of
    /// the given radius around `center`.
    fn lipschitz_estimate(&self, center: &Field<S>, radius: S) -> Result<S>;

    /// True when `Φ' ≡ 0`.
    fn is_constant(&self) -> bool {
        false
    }

    /// Matrix of the linear map `Φ'(u)`, assembled column by column.
    fn deriv_matrix(&self, u: &Field<S>) -> Result<DenseMatrix<S>> {
        let n = self.dim();
        if self.is_constant() {
            return Ok(DenseMatrix::zeros(n, n));
        }
        if !self.deriv_is_linear() {
            return Err(QviError::Config(format!(
                "derivative of the {} map is not linear",
                self.name()
            )));
        }
        DenseMatrix::from_columns(n, |e| {
            Ok(self.deriv(u, &Field::raw(e.to_vec()))?.into_inner())
        })
    }
}

/// `Φ ≡ ψ`: the obstacle problem.
#[derive(Debug, Clone)]
pub struct ConstantObstacle<S> {
    psi: Field<S>,
}

impl<S: Scalar> ConstantObstacle<S> {
    pub fn new(psi: Field<S>) -> Self {
        Self { psi }
    }

    pub fn psi(&self) -> &Field<S> {
        &self.psi
    }
}

impl<S: Scalar> ObstacleMap<S> for ConstantObstacle<S> {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn dim(&self) -> usize {
        self.psi.len()
    }

    fn eval(&self, u: &Field<S>) -> Result<Field<S>> {
        check_len(self.psi.len(), u.len())?;
        Ok(self.psi.clone())
    }

    fn deriv(&self, u: &Field<S>, h: &Field<S>) -> Result<Field<S>> {
        check_len(self.psi.len(), u.len())?;
        check_len(self.psi.len(), h.len())?;
        Ok(Field::zeros(h.len()))
    }

    fn deriv_is_linear(&self) -> bool {
        true
    }

    fn lipschitz_estimate(&self, _center: &Field<S>, _radius: S) -> Result<S> {
        Ok(S::zero())
    }

    fn is_constant(&self) -> bool {
        true
    }
}

/// `Φ(w) = offset + scale · (-Δ)^{-1} w`, with `w` entering as an L² function.
///
/// With the defaults `scale = 1`, `offset = 0` this is the plain inverse
/// Laplacian.
#[derive(Debug, Clone)]
pub struct InverseLaplacianObstacle<S> {
    space: DiscreteSpace<S>,
    scale: S,
    offset: Field<S>,
    gain: S,
}

impl<S: Scalar> InverseLaplacianObstacle<S> {
    pub fn new(space: &DiscreteSpace<S>) -> Result<Self> {
        Self::with_scale_offset(space, S::one(), space.zeros())
    }

    pub fn with_scale_offset(space: &DiscreteSpace<S>, scale: S, offset: Field<S>) -> Result<Self> {
        check_len(space.n_interior(), offset.len())?;
        if !(scale >= S::zero()) || !scale.is_finite() {
            return Err(QviError::Config(format!(
                "inverse-Laplacian scale must be nonnegative, got {scale}"
            )));
        }
        let gain = operator_norm(space)?;
        Ok(Self {
            space: space.clone(),
            scale,
            offset,
            gain,
        })
    }

    pub fn scale(&self) -> S {
        self.scale
    }

    pub fn offset(&self) -> &Field<S> {
        &self.offset
    }

    fn apply_linear(&self, w: &Field<S>) -> Result<Field<S>> {
        let mw = self.space.apply_mass(w)?;
        Ok(self.space.riesz(&mw)? * self.scale)
    }
}

/// `|L^{-1}M|` in the V-norm: the largest `λ` with `Mw = λLw`, by power
/// iteration (the operator is self-adjoint in the V inner product).
fn operator_norm<S: Scalar>(space: &DiscreteSpace<S>) -> Result<S> {
    let mut w = space.interpolate(|x| x * (S::one() - x));
    let mut lambda = S::zero();
    for _ in 0..500 {
        let norm = space.v_norm(&w)?;
        w = &w * (S::one() / norm);
        let next = space.riesz(&space.apply_mass(&w)?)?;
        let new_lambda = space.v_norm(&next)?;
        let done = (new_lambda - lambda).abs() <= S::tol_floor(1e-14, 16.0) * new_lambda;
        lambda = new_lambda;
        w = next;
        if done {
            break;
        }
    }
    Ok(lambda * (S::one() + S::tol_floor(1e-9, 1e3)))
}

impl<S: Scalar> ObstacleMap<S> for InverseLaplacianObstacle<S> {
    fn name(&self) -> &'static str {
        "inverse_laplacian"
    }

    fn dim(&self) -> usize {
        self.space.n_interior()
    }

    fn eval(&self, u: &Field<S>) -> Result<Field<S>> {
        Ok(&self.offset + &self.apply_linear(u)?)
    }

    fn deriv(&self, u: &Field<S>, h: &Field<S>) -> Result<Field<S>> {
        check_len(self.dim(), u.len())?;
        self.apply_linear(h)
    }

    fn deriv_is_linear(&self) -> bool {
        true
    }

    /// Exact: the map is affine.
    fn lipschitz_estimate(&self, _center: &Field<S>, _radius: S) -> Result<S> {
        Ok(self.scale * self.gain)
    }

    fn is_constant(&self) -> bool {
        self.scale == S::zero()
    }
}

/// Certified contraction radius of the thermoforming map around the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoRadius<S> {
    pub r_star: S,
}

impl<S: Scalar> ThermoRadius<S> {
    /// Sup-norm bound on the temperature argument over the V-ball of radius `r`.
    pub fn m_r(&self, r: S) -> S {
        let pi = S::pi();
        S::lit(0.5) * r + S::lit(10.0) * (S::one() + pi) / (S::lit(3.0) * pi) * r * r
    }

    /// Lipschitz bound of `Φ` on the V-ball of radius `r` around 0; below 1
    /// exactly when `r < r_star`.
    pub fn lipschitz_bound(&self, r: S) -> S {
        let pi = S::pi();
        S::lit(50.0 / 3.0) * (r + S::lit(20.0) * (S::one() + pi) / (S::lit(3.0) * pi) * r * r)
    }
}

pub fn thermo_lipschitz_radius<S: Scalar>() -> ThermoRadius<S> {
    let pi = S::pi();
    let three = S::lit(3.0);
    let root = ((S::lit(13.0) * pi * pi + S::lit(8.0) * pi) / S::lit(80.0)).sqrt();
    ThermoRadius {
        r_star: three / (S::lit(10.0) * (S::one() + pi)) * (root - pi / S::lit(4.0)),
    }
}

/// Mould map of a one-step thermoforming model:
/// `Φ(u) = φ T`, where `k T - T'' = g(ψ T - u)` with homogeneous Neumann data
/// and `g(s) = 4 min(0, s)²`.
///
/// `T` lives on all `n + 2` nodes; `u` is extended by its zero boundary values.
/// The reaction and source terms use the consistent mass matrix, which keeps
/// `u ↦ Φ(u)` order preserving as long as the Newton matrix stays an M-matrix.
#[derive(Debug, Clone)]
pub struct ThermoformingObstacle<S> {
    n: usize,
    h: S,
    k: S,
    /// `φ` and `ψ` on all nodes including the boundary.
    varphi: Vec<S>,
    psi: Vec<S>,
    /// `k M_C + K_N`.
    base: Tridiagonal<S>,
    newton_tol: S,
    max_newton: usize,
    seed: u64,
}

#[inline]
fn g<S: Scalar>(s: S) -> S {
    let m = s.min(S::zero());
    S::lit(4.0) * m * m
}

#[inline]
fn g_prime<S: Scalar>(s: S) -> S {
    S::lit(8.0) * s.min(S::zero())
}

/// Outcome of the temperature solve.
#[derive(Debug, Clone)]
pub struct TemperatureSolve<S> {
    /// Temperature on all `n + 2` nodes.
    pub temperature: Vec<S>,
    pub residual: S,
    pub iterations: usize,
}

impl<S: Scalar> ThermoformingObstacle<S> {
    pub fn new(space: &DiscreteSpace<S>) -> Result<Self> {
        let n = space.n_interior();
        let h = space.h();
        let pi = S::pi();
        let k = pi * pi;
        let x: Vec<S> = (0..n + 2).map(|i| S::lit(i as f64) * h).collect();
        let varphi: Vec<S> = x
            .iter()
            .map(|&x| {
                let v = S::lit(10.0) * pi * pi * (pi * x).sin()
                    / (S::lit(5.0) - (S::lit(2.0) * pi * x).cos());
                if v.abs() < S::epsilon() {
                    S::zero()
                } else {
                    v
                }
            })
            .collect();
        let psi = varphi.iter().map(|&v| v * S::lit(0.5)).collect();
        let base = neumann_stiffness(n, h)?;
        let mass = neumann_mass(n, h)?;
        let base = Tridiagonal::new(
            base.lower
                .iter()
                .zip(&mass.lower)
                .map(|(&a, &m)| a + k * m)
                .collect(),
            base.diag
                .iter()
                .zip(&mass.diag)
                .map(|(&a, &m)| a + k * m)
                .collect(),
            base.upper
                .iter()
                .zip(&mass.upper)
                .map(|(&a, &m)| a + k * m)
                .collect(),
        )?;
        Ok(Self {
            n,
            h,
            k,
            varphi,
            psi,
            base,
            newton_tol: S::tol_floor(1e-13, 1e3),
            max_newton: 100,
            seed: 0x7e57,
        })
    }

    /// Absolute tolerance on the Newton residual of the temperature equation.
    pub fn with_newton_tol(mut self, tol: S) -> Self {
        self.newton_tol = tol;
        self
    }

    /// Seed for the sampling part of [`ObstacleMap::lipschitz_estimate`].
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn k(&self) -> S {
        self.k
    }

    /// `φ` at the interior nodes.
    pub fn varphi(&self) -> &[S] {
        &self.varphi[1..=self.n]
    }

    fn extend(&self, u: &Field<S>) -> Result<Vec<S>> {
        check_len(self.n, u.len())?;
        let mut ext = Vec::with_capacity(self.n + 2);
        ext.push(S::zero());
        ext.extend(u.iter().copied());
        ext.push(S::zero());
        Ok(ext)
    }

    fn mass_apply(&self, v: &[S]) -> Vec<S> {
        let h6 = self.h / S::lit(6.0);
        let last = v.len() - 1;
        (0..v.len())
            .map(|i| {
                let d = if i == 0 || i == last {
                    S::lit(2.0)
                } else {
                    S::lit(4.0)
                };
                let mut acc = d * v[i];
                if i > 0 {
                    acc += v[i - 1];
                }
                if i < last {
                    acc += v[i + 1];
                }
                h6 * acc
            })
            .collect()
    }

    /// `J = k M_C + K_N - M_C diag(g'(s) ψ)`, which is tridiagonal.
    fn jacobian(&self, s: &[S]) -> Result<Tridiagonal<S>> {
        let h6 = self.h / S::lit(6.0);
        let c: Vec<S> = s
            .iter()
            .zip(&self.psi)
            .map(|(&si, &p)| -g_prime(si) * p)
            .collect();
        let last = c.len() - 1;
        let diag = (0..c.len())
            .map(|i| {
                let d = if i == 0 || i == last {
                    S::lit(2.0)
                } else {
                    S::lit(4.0)
                };
                self.base.diag[i] + h6 * d * c[i]
            })
            .collect();
        // Entry (i+1, i) multiplies column i; entry (i, i+1) multiplies column i+1.
        let lower = (0..last).map(|i| self.base.lower[i] + h6 * c[i]).collect();
        let upper = (0..last)
            .map(|i| self.base.upper[i] + h6 * c[i + 1])
            .collect();
        let j = Tridiagonal::new(lower, diag, upper)?;
        if !j.is_m_matrix() {
            return Err(QviError::Config(
                "mesh too coarse: temperature Jacobian lost the M-matrix property".into(),
            ));
        }
        Ok(j)
    }

    fn residual(&self, t: &[S], u_ext: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        let s: Vec<S> = t
            .iter()
            .zip(&self.psi)
            .zip(u_ext)
            .map(|((&ti, &p), &ui)| p * ti - ui)
            .collect();
        let gs: Vec<S> = s.iter().map(|&v| g(v)).collect();
        let mg = self.mass_apply(&gs);
        let r = self
            .base
            .mul_vec(t)?
            .iter()
            .zip(&mg)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok((r, s))
    }

    /// Damped Newton for the temperature, started from `T = 0`.
    pub fn solve_temperature(&self, u: &Field<S>) -> Result<TemperatureSolve<S>> {
        let u_ext = self.extend(u)?;
        let mut t = vec![S::zero(); self.n + 2];
        let (mut r, mut s) = self.residual(&t, &u_ext)?;
        let mut norm = max_abs(&r);
        let mut history = vec![norm.to_f64_lossy()];
        for it in 0..self.max_newton {
            if norm <= self.newton_tol {
                return Ok(TemperatureSolve {
                    temperature: t,
                    residual: norm,
                    iterations: it,
                });
            }
            let jac = self.jacobian(&s)?;
            let step = jac.solve(&r)?;
            let mut lambda = S::one();
            loop {
                let trial: Vec<S> = t.iter().zip(&step).map(|(&a, &d)| a - lambda * d).collect();
                let (tr, ts) = self.residual(&trial, &u_ext)?;
                let tn = max_abs(&tr);
                if tn <= (S::one() - S::lit(1e-4) * lambda) * norm || lambda < S::lit(1e-10) {
                    // A full step that cannot decrease further is at the rounding floor.
                    if !(tn < norm) && lambda < S::lit(1e-10) {
                        return self.finish(t, norm, it, history);
                    }
                    t = trial;
                    r = tr;
                    s = ts;
                    norm = tn;
                    break;
                }
                lambda *= S::lit(0.5);
            }
            history.push(norm.to_f64_lossy());
        }
        self.finish(t, norm, self.max_newton, history)
    }

    fn finish(
        &self,
        t: Vec<S>,
        norm: S,
        iterations: usize,
        history: Vec<f64>,
    ) -> Result<TemperatureSolve<S>> {
        if norm <= self.newton_tol.max(S::tol_floor(1e-10, 1e4)) {
            Ok(TemperatureSolve {
                temperature: t,
                residual: norm,
                iterations,
            })
        } else {
            Err(QviError::NoConvergence {
                solver: "temperature Newton",
                iterations,
                residual: norm.to_f64_lossy(),
                history,
            })
        }
    }

    fn deriv_with(&self, u_ext: &[S], t: &[S], h: &Field<S>) -> Result<Field<S>> {
        let h_ext = self.extend(h)?;
        let s: Vec<S> = t
            .iter()
            .zip(&self.psi)
            .zip(u_ext)
            .map(|((&ti, &p), &ui)| p * ti - ui)
            .collect();
        let jac = self.jacobian(&s)?;
        let gh: Vec<S> = s
            .iter()
            .zip(&h_ext)
            .map(|(&si, &hi)| -g_prime(si) * hi)
            .collect();
        let xi = jac.solve(&self.mass_apply(&gh))?;
        Ok(Field::raw(
            (1..=self.n).map(|i| self.varphi[i] * xi[i]).collect(),
        ))
    }
}

fn neumann_stiffness<S: Scalar>(n: usize, h: S) -> Result<Tridiagonal<S>> {
    let inv = S::one() / h;
    let mut diag = vec![S::lit(2.0) * inv; n + 2];
    diag[0] = inv;
    diag[n + 1] = inv;
    Tridiagonal::new(vec![-inv; n + 1], diag, vec![-inv; n + 1])
}

fn neumann_mass<S: Scalar>(n: usize, h: S) -> Result<Tridiagonal<S>> {
    let h6 = h / S::lit(6.0);
    let mut diag = vec![S::lit(4.0) * h6; n + 2];
    diag[0] = S::lit(2.0) * h6;
    diag[n + 1] = S::lit(2.0) * h6;
    Tridiagonal::new(vec![h6; n + 1], diag, vec![h6; n + 1])
}

impl<S: Scalar> ObstacleMap<S> for ThermoformingObstacle<S> {
    fn name(&self) -> &'static str {
        "thermoforming"
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, u: &Field<S>) -> Result<Field<S>> {
        let t = self.solve_temperature(u)?.temperature;
        Ok(Field::raw(
            (1..=self.n).map(|i| self.varphi[i] * t[i]).collect(),
        ))
    }

    fn deriv(&self, u: &Field<S>, h: &Field<S>) -> Result<Field<S>> {
        let t = self.solve_temperature(u)?.temperature;
        let u_ext = self.extend(u)?;
        self.deriv_with(&u_ext, &t, h)
    }

    fn deriv_is_linear(&self) -> bool {
        true
    }

    fn deriv_matrix(&self, u: &Field<S>) -> Result<DenseMatrix<S>> {
        let t = self.solve_temperature(u)?.temperature;
        let u_ext = self.extend(u)?;
        DenseMatrix::from_columns(self.n, |e| {
            Ok(self
                .deriv_with(&u_ext, &t, &Field::raw(e.to_vec()))?
                .into_inner())
        })
    }

    /// The certified bound when the ball sits inside the contraction radius,
    /// otherwise a sampled estimate with a 10% safety margin.
    fn lipschitz_estimate(&self, center: &Field<S>, radius: S) -> Result<S> {
        let space = DiscreteSpace::<S>::laplace(self.n)?;
        let reach = space.v_norm(center)? + radius;
        let cert = thermo_lipschitz_radius::<S>();
        let sampled = sample_lipschitz(self, &space, center, radius, 50, self.seed)?;
        if reach < cert.r_star {
            Ok(cert.lipschitz_bound(reach).max(sampled))
        } else {
            Ok(sampled * S::lit(1.1))
        }
    }
}

/// Largest ratio `|Φ(u₁) - Φ(u₂)|_V / |u₁ - u₂|_V` over random pairs in the
/// V-ball of the given radius.
pub fn sample_lipschitz<S: Scalar>(
    map: &dyn ObstacleMap<S>,
    space: &DiscreteSpace<S>,
    center: &Field<S>,
    radius: S,
    pairs: usize,
    seed: u64,
) -> Result<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = space.n_interior();
    let point = |rng: &mut ChaCha8Rng| -> Result<Field<S>> {
        // Smooth random directions: a few sine modes with decaying weights.
        let modes: Vec<f64> = (1..=6)
            .map(|j| rng.gen_range(-1.0..1.0) / j as f64)
            .collect();
        let dir = space.interpolate(|x| {
            modes
                .iter()
                .enumerate()
                .map(|(j, &c)| S::lit(c) * (S::lit((j + 1) as f64) * S::pi() * x).sin())
                .fold(S::zero(), |a, b| a + b)
        });
        let nrm = space.v_norm(&dir)?;
        let r = radius * S::lit(rng.gen_range(0.0..1.0));
        Ok(center.axpy(r / nrm.max(S::min_positive_value()), &dir))
    };
    let mut best = S::zero();
    for _ in 0..pairs {
        let a = point(&mut rng)?;
        let b = point(&mut rng)?;
        debug_assert_eq!(a.len(), n);
        let den = space.v_dist(&a, &b)?;
        if den <= S::epsilon() * (S::one() + space.v_norm(center)?) {
            continue;
        }
        let num = space.v_dist(&map.eval(&a)?, &map.eval(&b)?)?;
        best = best.max(num / den);
    }
    Ok(best)
}

/// Load vector `g ≥ 0` used by the thermoforming instance: nodal quadrature
/// of `π² sin(πx)`.
pub fn thermo_source<S: Scalar>(space: &DiscreteSpace<S>) -> DualField<S> {
    let pi = S::pi();
    space.load_of(|x| pi * pi * (pi * x).sin())
}
