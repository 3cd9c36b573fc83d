//! Randomized order-comparison suite shared by the command-line driver and
//! the test targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::extremal::{
    iterate_extremal, make_interval_from_bound, Branch, ExtremalOptions, OrderInterval,
};
use crate::fem::{order_violation, DiscreteSpace, DualField, Field};
use crate::obstacle::{InverseLaplacianObstacle, ObstacleMap};
use crate::penalty::sigma;
use crate::scalar::{pos, Scalar};
use crate::vi::{solve_s, solve_t_rho};

/// One nodewise comparison `lhs <= rhs`, reported as `max (lhs - rhs)^+`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub name: String,
    pub violation: f64,
}

/// Randomized inverse-Laplacian instance with ordered data
/// `g <= f <= F`, `ψ <= φ` and penalty parameters `ρ <= κ`.
#[derive(Debug, Clone)]
pub struct OrderInstance<S: Scalar> {
    pub space: DiscreteSpace<S>,
    pub map: InverseLaplacianObstacle<S>,
    pub interval: OrderInterval<S>,
    pub f: DualField<S>,
    pub g: DualField<S>,
    pub phi: Field<S>,
    pub psi: Field<S>,
    pub rho: S,
    pub kappa: S,
}

fn smooth<S: Scalar>(space: &DiscreteSpace<S>, rng: &mut ChaCha8Rng, amp: f64) -> Field<S> {
    let c: Vec<f64> = (1..=4)
        .map(|j| amp * rng.gen_range(-1.0..1.0) / j as f64)
        .collect();
    space.interpolate(|x| {
        c.iter()
            .enumerate()
            .map(|(j, &a)| S::lit(a) * (S::lit((j + 1) as f64) * S::pi() * x).sin())
            .fold(S::zero(), |s, t| s + t)
    })
}

pub fn random_order_instance<S: Scalar>(n: usize, seed: u64) -> Result<OrderInstance<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = DiscreteSpace::laplace(n)?;
    let scale = S::lit(rng.gen_range(0.5..5.0));
    let level = rng.gen_range(0.01..0.2);
    let offset = smooth(&space, &mut rng, 0.3 * level).map(|v| v + S::lit(level));
    let map = InverseLaplacianObstacle::with_scale_offset(&space, scale, offset)?;
    let top = rng.gen_range(5.0..30.0);
    let bound = space.load_of(|_| S::lit(top));
    let interval = make_interval_from_bound(&space, &bound, &map, S::one(), &Default::default())?;
    let f = DualField::raw(
        bound
            .iter()
            .map(|&b| b * S::lit(rng.gen_range(0.3..1.0)))
            .collect(),
    );
    let g = DualField::raw(
        f.iter()
            .map(|&v| v * S::lit(rng.gen_range(0.0..1.0)))
            .collect(),
    );
    let phi = smooth(&space, &mut rng, 1.0);
    let psi = Field::raw(
        phi.iter()
            .map(|&v| v - S::lit(rng.gen_range(0.0..0.5)))
            .collect(),
    );
    let rho = S::lit(10f64.powf(rng.gen_range(-4.0..-1.0)));
    let kappa = rho * S::lit(rng.gen_range(1.0..10.0));
    Ok(OrderInstance {
        space,
        map,
        interval,
        f,
        g,
        phi,
        psi,
        rho,
        kappa,
    })
}

fn cmp<S: Scalar>(out: &mut Vec<Comparison>, name: &str, lhs: &Field<S>, rhs: &Field<S>) {
    out.push(Comparison {
        name: name.to_string(),
        violation: order_violation(lhs, rhs).to_f64_lossy(),
    });
}

/// Nodewise comparisons of the order theory on one instance:
/// monotonicity of `T_ρ` in data and in `ρ`, `S <= T_ρ`, monotonicity of the
/// iterates and extremal solutions in `ρ`, VI iterates below penalized
/// iterates, and `Z <= Z_ρ`.
pub fn order_lemma_suite<S: Scalar>(
    inst: &OrderInstance<S>,
    opts: &ExtremalOptions<S>,
) -> Result<Vec<Comparison>> {
    let OrderInstance {
        space,
        map,
        interval,
        f,
        g,
        phi,
        psi,
        rho,
        kappa,
    } = inst;
    let (rho, kappa) = (*rho, *kappa);
    let so = &opts.solver;
    let mut out = Vec::new();

    let t_f_phi = solve_t_rho(space, rho, f, phi, map, None, so)?.solution;
    let t_g_psi = solve_t_rho(space, rho, g, psi, map, None, so)?.solution;
    cmp(
        &mut out,
        "T_rho(g, psi) <= T_rho(f, phi)",
        &t_g_psi,
        &t_f_phi,
    );

    let t_kappa = solve_t_rho(space, kappa, f, phi, map, None, so)?.solution;
    cmp(
        &mut out,
        "T_rho(f, phi) <= T_kappa(f, phi)",
        &t_f_phi,
        &t_kappa,
    );

    let s = solve_s(space, f, &map.eval(phi)?, so)?.solution;
    cmp(&mut out, "S(f, phi) <= T_rho(f, phi)", &s, &t_f_phi);

    let keep = ExtremalOptions {
        keep_iterates: true,
        ..*opts
    };
    for branch in [Branch::Max, Branch::Min] {
        let tag = match branch {
            Branch::Max => "M",
            Branch::Min => "m",
        };
        let z_rho = iterate_extremal(space, rho, f, interval, branch, map, &keep)?;
        let z_kappa = iterate_extremal(space, kappa, f, interval, branch, map, &keep)?;
        let z_vi = iterate_extremal(space, S::zero(), f, interval, branch, map, &keep)?;
        let z_g = iterate_extremal(space, rho, g, interval, branch, map, opts)?;
        cmp(
            &mut out,
            &format!("{tag}_rho(f) <= {tag}_kappa(f)"),
            &z_rho.solution,
            &z_kappa.solution,
        );
        cmp(
            &mut out,
            &format!("{tag}(f) <= {tag}_rho(f)"),
            &z_vi.solution,
            &z_rho.solution,
        );
        cmp(
            &mut out,
            &format!("{tag}_rho(g) <= {tag}_rho(f)"),
            &z_g.solution,
            &z_rho.solution,
        );
        // Sequences stop at different lengths; a finished sequence is extended
        // by its limit, which is where every later iterate sits.
        let at = |seq: &[Field<S>], k: usize, lim: &Field<S>| {
            seq.get(k).cloned().unwrap_or_else(|| lim.clone())
        };
        let len = z_rho
            .iterates
            .len()
            .max(z_kappa.iterates.len())
            .max(z_vi.iterates.len());
        let (mut w_rk, mut w_vr) = (S::zero(), S::zero());
        for k in 0..len {
            let r = at(&z_rho.iterates, k, &z_rho.solution);
            w_rk = w_rk.max(order_violation(
                &r,
                &at(&z_kappa.iterates, k, &z_kappa.solution),
            ));
            w_vr = w_vr.max(order_violation(&at(&z_vi.iterates, k, &z_vi.solution), &r));
        }
        out.push(Comparison {
            name: format!("{tag} iterates: rho <= kappa"),
            violation: w_rk.to_f64_lossy(),
        });
        out.push(Comparison {
            name: format!("{tag} iterates: VI <= penalized"),
            violation: w_vr.to_f64_lossy(),
        });
    }
    Ok(out)
}

/// Counts of penalty samples violating `0 <= r⁺ - σ_ρ(r) <= ρ/2` or the
/// monotonicity `ρ <= κ ⟹ σ_ρ(r) >= σ_κ(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenaltySamples {
    pub samples: usize,
    pub sandwich_failures: usize,
    pub monotone_failures: usize,
}

pub fn penalty_samples(samples: usize, seed: u64) -> PenaltySamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PenaltySamples {
        samples,
        sandwich_failures: 0,
        monotone_failures: 0,
    };
    for _ in 0..samples {
        let r: f64 = rng.gen_range(-10.0..10.0);
        let rho: f64 = 10f64.powf(rng.gen_range(-8.0..1.0));
        let kappa = rho * rng.gen_range(1.0..100.0);
        let gap = pos(r) - sigma(rho, r);
        if !(gap >= 0.0 && gap <= rho / 2.0) {
            out.sandwich_failures += 1;
        }
        if sigma(rho, r) < sigma(kappa, r) {
            out.monotone_failures += 1;
        }
    }
    out
}
