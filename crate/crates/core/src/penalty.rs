//! The smoothed positive part `σ_ρ` and the nodal operators it induces.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, QviError, Result};
use crate::fem::{DiscreteSpace, DualField, Field};
use crate::scalar::Scalar;

/// Penalty parameter `ρ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams<S> {
    rho: S,
}

impl<S: Scalar> PenaltyParams<S> {
    pub fn new(rho: S) -> Result<Self> {
        if rho > S::zero() && rho.is_finite() {
            Ok(Self { rho })
        } else {
            Err(QviError::Config(format!(
                "penalty parameter must be positive, got {rho}"
            )))
        }
    }

    pub fn rho(&self) -> S {
        self.rho
    }
}

/// `0` for `r <= 0`, `r²/(2ρ)` on `(0, ρ)`, `r - ρ/2` beyond.
#[inline]
pub fn sigma<S: Scalar>(rho: S, r: S) -> S {
    if r <= S::zero() {
        return S::zero();
    }
    let half = rho * S::lit(0.5);
    let mut s = if r < rho {
        r * r / (rho + rho)
    } else {
        r - half
    };
    // Round so that `0 <= r - σ_ρ(r) <= ρ/2` also holds in floating point.
    let mut guard = 0;
    while r - s > half && guard < 4 {
        s = s + S::epsilon() * s.abs().max(S::min_positive_value());
        guard += 1;
    }
    s.min(r)
}

#[inline]
pub fn sigma_prime<S: Scalar>(rho: S, r: S) -> S {
    if r <= S::zero() {
        S::zero()
    } else if r < rho {
        r / rho
    } else {
        S::one()
    }
}

/// `(M_L)_ii σ_ρ(v_i)`.
pub fn sigma_field<S: Scalar>(
    space: &DiscreteSpace<S>,
    rho: S,
    v: &Field<S>,
) -> Result<DualField<S>> {
    check_len(space.n_interior(), v.len())?;
    Ok(DualField::raw(
        v.iter()
            .zip(space.mass_lumped())
            .map(|(&x, &m)| m * sigma(rho, x))
            .collect(),
    ))
}

/// Diagonal `(M_L)_ii σ'_ρ(v_i)`.
pub fn sigma_prime_diag<S: Scalar>(
    space: &DiscreteSpace<S>,
    rho: S,
    v: &Field<S>,
) -> Result<Vec<S>> {
    check_len(space.n_interior(), v.len())?;
    Ok(v.iter()
        .zip(space.mass_lumped())
        .map(|(&x, &m)| m * sigma_prime(rho, x))
        .collect())
}
