//! P1 finite elements on a uniform mesh of (0, 1) with homogeneous Dirichlet
//! conditions: the discrete triple V_h ⊂ H ⊂ V_h* with its norms and order.

use std::ops::{Add, Deref, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, QviError, Result};
use crate::linalg::Tridiagonal;
use crate::scalar::{pos, Scalar};

/// Slack used for every nodal surrogate of an a.e. inequality.
pub const TOL_ORD: f64 = 1e-10;

/// Uniform P1 discretization of `A u = -(a u')'` on (0, 1).
#[derive(Debug, Clone)]
pub struct DiscreteSpace<S> {
    n_interior: usize,
    h: S,
    nodes: Vec<S>,
    /// Stiffness matrix of `A`.
    stiffness: Tridiagonal<S>,
    /// Stiffness of `-Δ`; defines the V-norm.
    laplacian: Tridiagonal<S>,
    mass: Tridiagonal<S>,
    mass_lumped: Vec<S>,
    coercivity: S,
    boundedness: S,
    self_adjoint: bool,
}

impl<S: Scalar> DiscreteSpace<S> {
    /// Assembles stiffness and mass matrices. The coefficient is sampled at
    /// element midpoints, so `C_a`/`C_b` are its minimum/maximum there.
    pub fn assemble<F>(n_interior: usize, coefficient: F) -> Result<Self>
    where
        F: Fn(S) -> S,
    {
        if n_interior < 2 {
            return Err(QviError::Config(format!(
                "need at least 2 interior nodes, got {n_interior}"
            )));
        }
        let n = n_interior;
        let h = S::one() / S::lit((n + 1) as f64);
        let half = S::lit(0.5);
        let element_coeff: Vec<S> = (0..=n)
            .map(|e| coefficient((S::lit(e as f64) + half) * h))
            .collect();
        if let Some(bad) = element_coeff
            .iter()
            .find(|a| !(**a > S::zero()) || !a.is_finite())
        {
            return Err(QviError::Config(format!(
                "coefficient must be positive and finite, found {bad}"
            )));
        }
        // Element e spans nodes e-1 and e (interior numbering), boundary nodes dropped.
        let diag: Vec<S> = (0..n)
            .map(|i| (element_coeff[i] + element_coeff[i + 1]) / h)
            .collect();
        let off: Vec<S> = (1..n).map(|i| -element_coeff[i] / h).collect();
        let stiffness = Tridiagonal::new(off.clone(), diag, off)?;
        if !stiffness.is_m_matrix() {
            return Err(QviError::Config(
                "stiffness matrix is not an M-matrix".into(),
            ));
        }
        let inv_h = S::one() / h;
        let laplacian = Tridiagonal::new(
            vec![-inv_h; n - 1],
            vec![S::lit(2.0) * inv_h; n],
            vec![-inv_h; n - 1],
        )?;
        let sixth = h / S::lit(6.0);
        let mass = Tridiagonal::new(
            vec![sixth; n - 1],
            vec![S::lit(4.0) * sixth; n],
            vec![sixth; n - 1],
        )?;
        let coercivity = element_coeff.iter().fold(S::infinity(), |m, &a| m.min(a));
        let boundedness = element_coeff.iter().fold(S::zero(), |m, &a| m.max(a));
        Ok(Self {
            n_interior: n,
            h,
            nodes: (1..=n).map(|i| S::lit(i as f64) * h).collect(),
            self_adjoint: stiffness.is_symmetric(),
            stiffness,
            laplacian,
            mass,
            mass_lumped: vec![h; n],
            coercivity,
            boundedness,
        })
    }

    /// `A = -Δ`.
    pub fn laplace(n_interior: usize) -> Result<Self> {
        Self::assemble(n_interior, |_| S::one())
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn h(&self) -> S {
        self.h
    }

    /// Interior node coordinates.
    pub fn nodes(&self) -> &[S] {
        &self.nodes
    }

    pub fn stiffness(&self) -> &Tridiagonal<S> {
        &self.stiffness
    }

    pub fn laplacian(&self) -> &Tridiagonal<S> {
        &self.laplacian
    }

    pub fn mass(&self) -> &Tridiagonal<S> {
        &self.mass
    }

    pub fn mass_lumped(&self) -> &[S] {
        &self.mass_lumped
    }

    /// `C_a`: `<Av, v> >= C_a |v|_V^2`.
    pub fn coercivity(&self) -> S {
        self.coercivity
    }

    /// `C_b`: `<Av, w> <= C_b |v|_V |w|_V`.
    pub fn boundedness(&self) -> S {
        self.boundedness
    }

    pub fn self_adjoint(&self) -> bool {
        self.self_adjoint
    }

    pub fn zeros(&self) -> Field<S> {
        Field(vec![S::zero(); self.n_interior])
    }

    pub fn dual_zeros(&self) -> DualField<S> {
        DualField(vec![S::zero(); self.n_interior])
    }

    /// Nodal interpolant of `g`.
    pub fn interpolate<F: Fn(S) -> S>(&self, g: F) -> Field<S> {
        Field(self.nodes.iter().map(|&x| g(x)).collect())
    }

    /// Load vector of a function by nodal (lumped) quadrature.
    pub fn load_of<F: Fn(S) -> S>(&self, g: F) -> DualField<S> {
        DualField(
            self.nodes
                .iter()
                .zip(&self.mass_lumped)
                .map(|(&x, &m)| m * g(x))
                .collect(),
        )
    }

    /// `M_L v` for a nodal field.
    pub fn lumped_load(&self, v: &Field<S>) -> DualField<S> {
        DualField(
            v.iter()
                .zip(&self.mass_lumped)
                .map(|(&a, &m)| a * m)
                .collect(),
        )
    }

    /// Nodal density `M_L^{-1} f` of a load vector.
    pub fn density(&self, f: &DualField<S>) -> Field<S> {
        Field(
            f.iter()
                .zip(&self.mass_lumped)
                .map(|(&a, &m)| a / m)
                .collect(),
        )
    }

    pub fn apply_stiffness(&self, v: &Field<S>) -> Result<DualField<S>> {
        Ok(DualField(self.stiffness.mul_vec(v)?))
    }

    pub fn apply_laplacian(&self, v: &Field<S>) -> Result<DualField<S>> {
        Ok(DualField(self.laplacian.mul_vec(v)?))
    }

    pub fn apply_mass(&self, v: &Field<S>) -> Result<DualField<S>> {
        Ok(DualField(self.mass.mul_vec(v)?))
    }

    /// `|v|_V^2 = v^T L v`, with `L` the stiffness of `-Δ`.
    pub fn v_norm(&self, v: &Field<S>) -> Result<S> {
        let lv = self.laplacian.mul_vec(v)?;
        Ok(dot(v, &lv).max(S::zero()).sqrt())
    }

    /// `|v|_H^2 = v^T M v`.
    pub fn h_norm(&self, v: &Field<S>) -> Result<S> {
        let mv = self.mass.mul_vec(v)?;
        Ok(dot(v, &mv).max(S::zero()).sqrt())
    }

    /// `|f|_{V*}^2 = f^T L^{-1} f`.
    pub fn dual_norm(&self, f: &DualField<S>) -> Result<S> {
        let r = self.riesz(f)?;
        Ok(dot(f, &r).max(S::zero()).sqrt())
    }

    /// V-distance between two fields.
    pub fn v_dist(&self, a: &Field<S>, b: &Field<S>) -> Result<S> {
        self.v_norm(&(a - b))
    }

    /// Riesz representative `L^{-1} f` in the V inner product.
    pub fn riesz(&self, f: &DualField<S>) -> Result<Field<S>> {
        Ok(Field(self.laplacian.solve(f)?))
    }

    /// Duality pairing `<f, v>`.
    pub fn pair(&self, f: &DualField<S>, v: &Field<S>) -> Result<S> {
        check_len(f.len(), v.len())?;
        Ok(dot(f, v))
    }

    /// `A^{-1} f`.
    pub fn solve_stiffness(&self, f: &DualField<S>) -> Result<Field<S>> {
        solve_linear(&self.stiffness, f)
    }
}

pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn max_abs<S: Scalar>(a: &[S]) -> S {
    a.iter().fold(S::zero(), |m, &x| m.max(x.abs()))
}

/// Solves a tridiagonal system and verifies the relative residual.
pub fn solve_linear<S: Scalar>(matrix: &Tridiagonal<S>, rhs: &DualField<S>) -> Result<Field<S>> {
    let x = matrix.solve(rhs)?;
    let ax = matrix.mul_vec(&x)?;
    let res = ax
        .iter()
        .zip(rhs.iter())
        .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs()));
    // Backward-error scale |A| |x| + |b|: Thomas is stable here, so the
    // residual only reflects rounding at that size.
    let a_inf = (0..matrix.dim()).fold(S::zero(), |m, i| {
        let mut row = matrix.diag[i].abs();
        if i > 0 {
            row += matrix.lower[i - 1].abs();
        }
        if i + 1 < matrix.dim() {
            row += matrix.upper[i].abs();
        }
        m.max(row)
    });
    let scale = max_abs(rhs) + a_inf * max_abs(&x);
    let tol = S::tol_floor(1e-12, 64.0 * matrix.dim() as f64);
    if res > tol * scale.max(S::min_positive_value()) && res > S::min_positive_value() {
        let dmax = max_abs(&matrix.diag);
        return Err(QviError::Singular {
            condition: (dmax * max_abs(&x) / scale.max(S::min_positive_value())).to_f64_lossy(),
        });
    }
    Ok(Field(x))
}

macro_rules! nodal_vector {
    ($name:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name<S>(Vec<S>);

        impl<S: Scalar> $name<S> {
            /// Rejects non-finite entries.
            pub fn new(values: Vec<S>) -> Result<Self> {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(QviError::NonFinite(stringify!($name)));
                }
                Ok(Self(values))
            }

            pub(crate) fn raw(values: Vec<S>) -> Self {
                Self(values)
            }

            pub fn zeros(n: usize) -> Self {
                Self(vec![S::zero(); n])
            }

            pub fn constant(n: usize, c: S) -> Self {
                Self(vec![c; n])
            }

            pub fn into_inner(self) -> Vec<S> {
                self.0
            }

            pub fn map<F: Fn(S) -> S>(&self, f: F) -> Self {
                Self(self.0.iter().map(|&x| f(x)).collect())
            }

            pub fn zip_map<F: Fn(S, S) -> S>(&self, other: &Self, f: F) -> Self {
                debug_assert_eq!(self.len(), other.len());
                Self(
                    self.0
                        .iter()
                        .zip(&other.0)
                        .map(|(&a, &b)| f(a, b))
                        .collect(),
                )
            }

            /// `self + t * other`.
            pub fn axpy(&self, t: S, other: &Self) -> Self {
                self.zip_map(other, |a, b| a + t * b)
            }

            pub fn max_abs(&self) -> S {
                max_abs(&self.0)
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn cast<T: Scalar>(&self) -> $name<T> {
                $name(self.0.iter().map(|&v| T::lit(v.to_f64_lossy())).collect())
            }
        }

        impl<S> Deref for $name<S> {
            type Target = [S];
            fn deref(&self) -> &[S] {
                &self.0
            }
        }

        impl<S: Scalar> Add for &$name<S> {
            type Output = $name<S>;
            fn add(self, rhs: Self) -> $name<S> {
                self.zip_map(rhs, |a, b| a + b)
            }
        }

        impl<S: Scalar> Sub for &$name<S> {
            type Output = $name<S>;
            fn sub(self, rhs: Self) -> $name<S> {
                self.zip_map(rhs, |a, b| a - b)
            }
        }

        impl<S: Scalar> Add for $name<S> {
            type Output = $name<S>;
            fn add(self, rhs: Self) -> $name<S> {
                &self + &rhs
            }
        }

        impl<S: Scalar> Sub for $name<S> {
            type Output = $name<S>;
            fn sub(self, rhs: Self) -> $name<S> {
                &self - &rhs
            }
        }

        impl<S: Scalar> Mul<S> for &$name<S> {
            type Output = $name<S>;
            fn mul(self, rhs: S) -> $name<S> {
                self.map(|a| a * rhs)
            }
        }

        impl<S: Scalar> Mul<S> for $name<S> {
            type Output = $name<S>;
            fn mul(self, rhs: S) -> $name<S> {
                &self * rhs
            }
        }

        impl<S: Scalar> Neg for &$name<S> {
            type Output = $name<S>;
            fn neg(self) -> $name<S> {
                self.map(|a| -a)
            }
        }
    };
}

nodal_vector!(
    Field,
    "Nodal coefficients of an element of V_h (interior nodes; zero boundary values implied)."
);
nodal_vector!(
    DualField,
    "Load-vector representation of an element of V_h*: entry `i` is `<f, φ_i>`."
);

impl<S: Scalar> DualField<S> {
    /// Nodewise order of load vectors. For P1 hats this is the dual-cone order
    /// restricted to V_h.
    pub fn order_leq(&self, other: &Self, tol: S) -> bool {
        self.iter().zip(other.iter()).all(|(&a, &b)| a <= b + tol)
    }
}

/// Nodewise positive part.
pub fn pos_part<S: Scalar>(v: &Field<S>) -> Field<S> {
    v.map(pos)
}

/// `inf(a, b) = a - (a - b)^+`.
pub fn inf<S: Scalar>(a: &Field<S>, b: &Field<S>) -> Field<S> {
    a.zip_map(b, |x, y| x - pos(x - y))
}

/// `sup(a, b) = a + (b - a)^+`.
pub fn sup<S: Scalar>(a: &Field<S>, b: &Field<S>) -> Field<S> {
    a.zip_map(b, |x, y| x + pos(y - x))
}

/// `x_i <= y_i + tol` for all `i`.
pub fn order_leq<S: Scalar>(x: &Field<S>, y: &Field<S>, tol: S) -> bool {
    x.len() == y.len() && x.iter().zip(y.iter()).all(|(&a, &b)| a <= b + tol)
}

/// Largest violation `max_i (x_i - y_i)^+`.
pub fn order_violation<S: Scalar>(x: &[S], y: &[S]) -> S {
    x.iter()
        .zip(y)
        .fold(S::zero(), |m, (&a, &b)| m.max(pos(a - b)))
}
