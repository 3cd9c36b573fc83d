use std::f64::consts::PI;

use qvi_core::checks::{order_lemma_suite, penalty_samples, random_order_instance};
use qvi_core::control::{
    bouligand_residual, certify_stationarity, optimize, CertificateTolerances, ControlProblem,
    OptimizeOptions,
};
use qvi_core::extremal::{
    iterate_extremal, lipschitz_probe, make_interval_from_bound, rho_continuation, Branch,
    ExtremalOptions, OrderInterval,
};
use qvi_core::fem::order_violation;
use qvi_core::obstacle::{
    thermo_source, ConstantObstacle, InverseLaplacianObstacle, ObstacleMap, ThermoformingObstacle,
};
use qvi_core::sensitivity::{deriv_z, deriv_z_rho, fd_converges, fd_errors, DerivativeOptions};
use qvi_core::vi::{solve_s, solve_t_rho};
use qvi_core::{DiscreteSpace64, DualField, DualField64, Field64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{ObstacleSpec, RunConfig};
use crate::error::CliError;
use crate::output::{CheckLine, OutDir, Outcome};

type Res = Result<Outcome, CliError>;

fn space(cfg: &RunConfig) -> Result<DiscreteSpace64, CliError> {
    let coefficient = cfg.coefficient.clone();
    Ok(DiscreteSpace64::assemble(cfg.n, move |x| {
        coefficient.at(x).unwrap_or(f64::NAN)
    })?)
}

fn obstacle_map(
    cfg: &RunConfig,
    s: &DiscreteSpace64,
) -> Result<Box<dyn ObstacleMap<f64>>, CliError> {
    Ok(match &cfg.obstacle {
        ObstacleSpec::Constant { psi } => {
            Box::new(ConstantObstacle::new(psi.field(s, &cfg.base_dir)?))
        }
        ObstacleSpec::InverseLaplacian { scale, offset } => {
            Box::new(InverseLaplacianObstacle::with_scale_offset(
                s,
                *scale,
                offset.field(s, &cfg.base_dir)?,
            )?)
        }
        ObstacleSpec::Thermoforming => Box::new(ThermoformingObstacle::new(s)?),
    })
}

/// Interval from the configured bound, from explicit endpoints, or from
/// `default_bound` when neither is given.
fn interval(
    cfg: &RunConfig,
    s: &DiscreteSpace64,
    map: &dyn ObstacleMap<f64>,
    default_bound: &DualField64,
    opts: &ExtremalOptions<f64>,
) -> Result<OrderInterval<f64>, CliError> {
    let iv = &cfg.interval;
    match (&iv.sub, &iv.sup, &iv.bound) {
        (Some(sub), Some(sup), _) => Ok(OrderInterval::unchecked(
            sub.field(s, &cfg.base_dir)?,
            sup.field(s, &cfg.base_dir)?,
            iv.rho0,
        )?),
        (_, _, Some(b)) => Ok(make_interval_from_bound(
            s,
            &b.load(s, &cfg.base_dir)?,
            map,
            iv.rho0,
            &opts.solver,
        )?),
        _ => Ok(make_interval_from_bound(
            s,
            default_bound,
            map,
            iv.rho0,
            &opts.solver,
        )?),
    }
}

/// Space, map, load and interval of the configured extremal problem.
struct Instance {
    space: DiscreteSpace64,
    map: Box<dyn ObstacleMap<f64>>,
    f: DualField64,
    interval: OrderInterval<f64>,
    opts: ExtremalOptions<f64>,
}

impl Instance {
    fn build(cfg: &RunConfig) -> Result<Self, CliError> {
        let space = space(cfg)?;
        let map = obstacle_map(cfg, &space)?;
        let f = cfg.source.load(&space, &cfg.base_dir)?;
        let opts = cfg.solver.extremal();
        // Without a configured bound, F = 2|f| leaves room for perturbations.
        let default_bound = f.map(|v| 2.0 * v.abs());
        let interval = interval(cfg, &space, map.as_ref(), &default_bound, &opts)?;
        if !interval.admits(&f) {
            return Err(CliError::Config(
                "the source is not admissible: 0 <= f <= F fails".into(),
            ));
        }
        Ok(Self {
            space,
            map,
            f,
            interval,
            opts,
        })
    }

    fn nodes(&self) -> &[f64] {
        self.space.nodes()
    }
}

fn branch_name(b: Branch) -> &'static str {
    match b {
        Branch::Max => "max",
        Branch::Min => "min",
    }
}

pub fn solve_vi(cfg: &RunConfig, out: &mut OutDir) -> Res {
    let inst = Instance::build(cfg)?;
    let phi = cfg.solve.phi.field(&inst.space, &cfg.base_dir)?;
    let obstacle = inst.map.eval(&phi)?;
    let rep = solve_s(&inst.space, &inst.f, &obstacle, &inst.opts.solver)?;
    out.field("solution.csv", inst.nodes(), &rep.solution)?;
    out.field("multiplier.csv", inst.nodes(), &inst.space.density(&rep.xi))?;
    Ok(Outcome {
        checks: vec![CheckLine::at_most(
            "vi_residual",
            rep.final_residual,
            cfg.solve.tol_residual,
        )],
        results: json!({
            "iterations": rep.iterations,
            "final_residual": rep.final_residual,
            "active_set": rep.active_set,
            "v_norm": inst.space.v_norm(&rep.solution)?,
        }),
        warnings: inst.interval.warnings.clone(),
    })
}

pub fn solve_pen(cfg: &RunConfig, out: &mut OutDir) -> Res {
    let inst = Instance::build(cfg)?;
    let rho = if cfg.rho.value > 0.0 {
        cfg.rho.value
    } else {
        cfg.rho.rho0
    };
    let phi = cfg.solve.phi.field(&inst.space, &cfg.base_dir)?;
    let rep = solve_t_rho(
        &inst.space,
        rho,
        &inst.f,
        &phi,
        inst.map.as_ref(),
        None,
        &inst.opts.solver,
    )?;
    let vi = solve_s(
        &inst.space,
        &inst.f,
        &inst.map.eval(&phi)?,
        &inst.opts.solver,
    )?;
    out.field("solution.csv", inst.nodes(), &rep.solution)?;
    out.field("multiplier.csv", inst.nodes(), &inst.space.density(&rep.xi))?;
    let scale = 1.0 + inst.f.max_abs();
    Ok(Outcome {
        checks: vec![
            CheckLine::at_most(
                "penalized_residual",
                rep.final_residual,
                cfg.solve.tol_residual * scale,
            ),
            CheckLine::at_most(
                "vi_below_penalized",
                order_violation(&vi.solution, &rep.solution),
                cfg.proptest.tol_ord,
            ),
        ],
        results: json!({
            "rho": rho,
            "newton_iterations": rep.iterations,
            "final_residual": rep.final_residual,
            "transition_or_contact_nodes": rep.active_set,
            "distance_to_vi": inst.space.v_dist(&rep.solution, &vi.solution)?,
        }),
        warnings: inst.interval.warnings.clone(),
    })
}

pub fn extremal(cfg: &RunConfig, out: &mut OutDir) -> Res {
    let inst = Instance::build(cfg)?;
    let rho = cfg.rho.value;
    let r = iterate_extremal(
        &inst.space,
        rho,
        &inst.f,
        &inst.interval,
        cfg.branch,
        inst.map.as_ref(),
        &inst.opts,
    )?;
    out.field("solution.csv", inst.nodes(), &r.solution)?;
    out.field("multiplier.csv", inst.nodes(), &inst.space.density(&r.xi))?;
    out.csv(
        "history.csv",
        &["n", "difference"],
        r.iterate_history.iter().map(|&(k, d)| [k as f64, d]),
    )?;
    let in_interval = order_violation(&inst.interval.sub, &r.solution)
        .max(order_violation(&r.solution, &inst.interval.sup));
    Ok(Outcome {
        checks: vec![
            CheckLine::flag("monotone_iterates", r.monotone),
            CheckLine::at_most(
                "fixed_point_residual",
                r.fixed_point_residual,
                10.0 * inst.opts.tol_fp,
            ),
            CheckLine::at_most("inside_interval", in_interval, inst.opts.tol_ord),
        ],
        results: json!({
            "branch": branch_name(cfg.branch),
            "rho": rho,
            "iterations": r.iterate_history.len(),
            "fixed_point_residual": r.fixed_point_residual,
            "v_norm": inst.space.v_norm(&r.solution)?,
        }),
        warnings: inst.interval.warnings.clone(),
    })
}

pub fn rho_sweep(cfg: &RunConfig, out: &mut OutDir) -> Res {
    let inst = Instance::build(cfg)?;
    let schedule = cfg.rho.schedule();
    let run = rho_continuation(
        &inst.space,
        &inst.f,
        &inst.interval,
        cfg.branch,
        inst.map.as_ref(),
        &schedule,
        &inst.opts,
    )?;
    out.csv(
        "rho_sweep.csv",
        &["rho", "error_v"],
        run.errors.iter().map(|&(r, e)| [r, e]),
    )?;
    out.field("reference.csv", inst.nodes(), &run.reference.solution)?;
    let last = run.errors.last().map_or(0.0, |e| e.1);
    Ok(Outcome {
        checks: vec![CheckLine::flag(
            "errors_nonincreasing",
            run.errors_nonincreasing(0.0),
        )],
        results: json!({
            "branch": branch_name(cfg.branch),
            "schedule": schedule,
            "errors": run.errors.iter().map(|e| e.1).collect::<Vec<_>>(),
            "final_error": last,
        }),
        warnings: inst.interval.warnings.clone(),
    })
}

pub fn diff_check(cfg: &RunConfig, out: &mut OutDir) -> Res {
    let mut inst = Instance::build(cfg)?;
    // Difference quotients need fixed points at rounding level.
    let mut solver = cfg.solver.clone();
    solver.tight = true;
    inst.opts = solver.extremal();
    let rho = cfg.rho.value;
    let dopts = DerivativeOptions::default();
    let base = iterate_extremal(
        &inst.space,
        rho,
        &inst.f,
        &inst.interval,
        cfg.branch,
        inst.map.as_ref(),
        &inst.opts,
    )?;
    let d = cfg.diff.direction.load(&inst.space, &cfg.base_dir)?;
    let r = if rho > 0.0 {
        deriv_z_rho(
            &inst.space,
            rho,
            &base.solution,
            &d,
            inst.map.as_ref(),
            &dopts,
        )?
    } else {
        deriv_z(
            &inst.space,
            &base.solution,
            &base.xi,
            &d,
            inst.map.as_ref(),
            &dopts,
        )?
    };
    let errs = fd_errors(
        &inst.space,
        rho,
        &inst.f,
        &d,
        &base.solution,
        &r.alpha,
        &cfg.diff.steps,
        &inst.interval,
        cfg.branch,
        inst.map.as_ref(),
        &inst.opts,
    )?;
    out.csv(
        "fd_errors.csv",
        &["s", "error_v"],
        errs.iter().map(|&(s, e)| [s, e]),
    )?;
    out.field("derivative.csv", inst.nodes(), &r.alpha)?;
    let mut warnings = inst.interval.warnings.clone();
    let cone = r.cone.as_ref().map(|c| {
        if !c.biactive.is_empty() {
            warnings.push(format!("{} biactive nodes: complementarity is not strict", c.biactive.len()));
        }
        json!({"strongly_active": c.strongly_active.len(), "biactive": c.biactive.len(), "inactive": c.inactive.len()})
    });
    Ok(Outcome {
        checks: vec![
            CheckLine::at_most("derivative_residual", r.residual, cfg.diff.tol_residual),
            CheckLine::flag(
                "fd_error_decay",
                fd_converges(&errs, cfg.diff.factor, cfg.diff.floor),
            ),
        ],
        results: json!({
            "branch": branch_name(cfg.branch),
            "rho": rho,
            "fixed_point_iterations": r.fixed_point_iters,
            "residual": r.residual,
            "fd_errors": errs,
            "cone": cone,
        }),
        warnings,
    })
}

/// Smooth random load perturbations keeping `0 <= f + d <= F`.
fn perturbations(cfg: &RunConfig, inst: &Instance) -> Result<Vec<DualField64>, CliError> {
    let bound = inst.interval.bound.clone().ok_or_else(|| {
        CliError::Config("lipschitz-probe needs an interval built from a bound".into())
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = (
        cfg.lipschitz.min_amplitude.log10(),
        cfg.lipschitz.max_amplitude.log10(),
    );
    (0..cfg.lipschitz.count)
        .map(|_| {
            let c: Vec<f64> = (1..=5)
                .map(|j| rng.gen_range(-1.0..1.0) / j as f64)
                .collect();
            let amp = if hi > lo {
                10f64.powf(rng.gen_range(lo..hi))
            } else {
                10f64.powf(lo)
            };
            let shape = inst.space.interpolate(|x| {
                c.iter()
                    .enumerate()
                    .map(|(j, a)| a * ((j + 1) as f64 * PI * x).sin())
                    .sum()
            });
            let d = inst.space.lumped_load(&shape) * amp;
            Ok(DualField::new(
                (0..d.len())
                    .map(|i| d[i].clamp(-inst.f[i], bound[i] - inst.f[i]))
                    .collect(),
            )?)
        })
        .collect()
}

pub fn lipschitz(cfg: &RunConfig, out: &mut OutDir) -> Res {
    let inst = Instance::build(cfg)?;
    let perts = perturbations(cfg, &inst)?;
    let rep = lipschitz_probe(
        &inst.space,
        &inst.f,
        &perts,
        cfg.rho.value,
        cfg.branch,
        &inst.interval,
        inst.map.as_ref(),
        &inst.opts,
    )?;
    out.csv(
        "ratios.csv",
        &["sample", "ratio"],
        rep.ratios.iter().enumerate().map(|(k, &r)| [k as f64, r]),
    )?;
    let mut checks = vec![CheckLine::at_most("max_ratio", rep.max_ratio, rep.bound)];
    if inst.map.is_constant() {
        checks.push(CheckLine::at_most(
            "max_ratio_vi",
            rep.max_ratio,
            1.0 / inst.space.coercivity() + 1e-8,
        ));
    }
    Ok(Outcome {
        checks,
        results: json!({
            "branch": branch_name(cfg.branch),
            "rho": cfg.rho.value,
            "samples": rep.ratios.len(),
            "skipped": rep.skipped,
            "max_ratio": rep.max_ratio,
            "c_l": rep.c_l,
            "bound": rep.bound,
            "constants": rep.constants,
        }),
        warnings: inst.interval.warnings.clone(),
    })
}

struct ControlSetup {
    space: DiscreteSpace64,
    map: Box<dyn ObstacleMap<f64>>,
    interval: OrderInterval<f64>,
    y_d: Field64,
    u_a: Field64,
    u_b: Field64,
}

impl ControlSetup {
    fn build(cfg: &RunConfig) -> Result<Self, CliError> {
        let space = space(cfg)?;
        let map = obstacle_map(cfg, &space)?;
        let c = &cfg.control;
        let u_a = c.u_a.field(&space, &cfg.base_dir)?;
        let u_b = c.u_b.field(&space, &cfg.base_dir)?;
        let y_d = c.y_d.field(&space, &cfg.base_dir)?;
        let default_bound = space.lumped_load(&u_b);
        let interval = interval(
            cfg,
            &space,
            map.as_ref(),
            &default_bound,
            &cfg.solver.extremal(),
        )?;
        Ok(Self {
            space,
            map,
            interval,
            y_d,
            u_a,
            u_b,
        })
    }

    fn problem(&self, cfg: &RunConfig) -> Result<ControlProblem<'_, f64>, CliError> {
        let c = &cfg.control;
        Ok(ControlProblem::new(
            &self.space,
            self.map.as_ref(),
            &self.interval,
            c.a,
            c.b,
            self.y_d.clone(),
            c.nu,
            self.u_a.clone(),
            self.u_b.clone(),
        )?)
    }
}

fn run_optimize(
    cfg: &RunConfig,
    setup: &ControlSetup,
    prob: &ControlProblem<'_, f64>,
    tol_kkt: f64,
    out: &mut OutDir,
) -> Result<qvi_core::control::OptimizeResult<f64>, CliError> {
    let f0 = match &cfg.control.f0 {
        Some(f) => f.field(&setup.space, &cfg.base_dir)?,
        None => setup.u_a.clone(),
    };
    let opts = OptimizeOptions {
        tol_kkt,
        max_iter: cfg.control.max_iter,
        ..Default::default()
    };
    let res = optimize(prob, &cfg.control.schedule, &f0, &opts)?;
    out.csv(
        "trajectory.csv",
        &["iter", "value", "kkt_residual", "rho"],
        res.trajectory
            .iter()
            .map(|t| [t.iter as f64, t.value, t.kkt_residual, t.rho]),
    )?;
    out.field("control.csv", setup.space.nodes(), &res.f)?;
    Ok(res)
}

pub fn control(cfg: &RunConfig, out: &mut OutDir) -> Res {
    let setup = ControlSetup::build(cfg)?;
    let prob = setup.problem(cfg)?;
    let res = run_optimize(cfg, &setup, &prob, cfg.control.tol_kkt, out)?;
    let cert = certify_stationarity(
        &prob,
        &res.f,
        cfg.control.rho_certify,
        &CertificateTolerances::default(),
    )?;
    out.json("certificate.json", &cert)?;
    out.field("state_max.csv", setup.space.nodes(), &cert.y)?;
    out.field("state_min.csv", setup.space.nodes(), &cert.z)?;
    Ok(Outcome {
        checks: vec![CheckLine::at_most(
            "kkt_residual",
            res.kkt_residual,
            cfg.control.tol_kkt,
        )],
        results: json!({
            "value": res.value,
            "kkt_residual": res.kkt_residual,
            "iterations": res.trajectory.last().map_or(0, |t| t.iter),
            "certificate_pass": cert.pass,
        }),
        warnings: setup.interval.warnings.clone(),
    })
}

pub fn certify(cfg: &RunConfig, out: &mut OutDir) -> Res {
    let setup = ControlSetup::build(cfg)?;
    let prob = setup.problem(cfg)?;
    let f_star = match &cfg.control.f_star {
        Some(f) => f.field(&setup.space, &cfg.base_dir)?,
        None => run_optimize(cfg, &setup, &prob, cfg.control.certify_tol_kkt, out)?.f,
    };
    let cert = certify_stationarity(
        &prob,
        &f_star,
        cfg.control.rho_certify,
        &CertificateTolerances::default(),
    )?;
    out.json("certificate.json", &cert)?;
    let b = bouligand_residual(
        &prob,
        &f_star,
        cfg.control.bouligand_directions,
        cfg.seed,
        &DerivativeOptions::default(),
    )?;
    out.csv(
        "bouligand.csv",
        &["direction", "value"],
        b.values.iter().enumerate().map(|(k, &v)| [k as f64, v]),
    )?;
    let mut checks: Vec<CheckLine> = cert
        .checks
        .iter()
        .map(|c| {
            // Sign checks are lower bounds on a product, the rest upper bounds on a residual.
            if c.name.ends_with("_sign") {
                CheckLine {
                    pass: c.pass,
                    ..CheckLine::at_least(c.name, c.value, -c.tolerance)
                }
            } else {
                CheckLine {
                    pass: c.pass,
                    ..CheckLine::at_most(c.name, c.value, c.tolerance)
                }
            }
        })
        .collect();
    checks.push(CheckLine::at_least("bouligand_min", b.min_value, -1e-6));
    Ok(Outcome {
        checks,
        results: json!({
            "rho": cert.rho,
            "weighted_signs": cert.weighted_signs,
            "bouligand_min": b.min_value,
        }),
        warnings: setup.interval.warnings.clone(),
    })
}

pub fn thermoform(cfg: &RunConfig, out: &mut OutDir) -> Res {
    let s = DiscreteSpace64::laplace(cfg.n)?;
    let map = ThermoformingObstacle::new(&s)?;
    let f = thermo_source(&s);
    let opts = cfg.solver.extremal();
    let iv = make_interval_from_bound(&s, &f, &map, 1.0, &opts.solver)?;
    let m = iterate_extremal(&s, 0.0, &f, &iv, Branch::Min, &map, &opts)?;
    let big = iterate_extremal(&s, 0.0, &f, &iv, Branch::Max, &map, &opts)?;
    let sine = s.interpolate(|x| (PI * x).sin());
    let m_v = s.v_norm(&m.solution)?;
    let err = s.h_norm(&(&big.solution - &sine))?;
    out.csv(
        "thermoform.csv",
        &["x", "min", "max", "sin_pi"],
        (0..cfg.n).map(|i| [s.nodes()[i], m.solution[i], big.solution[i], sine[i]]),
    )?;
    Ok(Outcome {
        checks: vec![
            CheckLine::at_most("min_branch_v_norm", m_v, 1e-8),
            CheckLine::at_most("max_branch_l2_distance_to_sine", err, 1e-3),
        ],
        results: json!({
            "n": cfg.n,
            "min_iterations": m.iterate_history.len(),
            "max_iterations": big.iterate_history.len(),
            "min_v_norm": m_v,
            "max_l2_error": err,
        }),
        warnings: iv.warnings,
    })
}

pub fn proptest(cfg: &RunConfig, _out: &mut OutDir) -> Res {
    let p = &cfg.proptest;
    let opts = ExtremalOptions::tight();
    let mut worst: Vec<(String, f64)> = Vec::new();
    for k in 0..p.instances {
        let inst = random_order_instance::<f64>(p.n, cfg.seed.wrapping_add(k as u64))?;
        for c in order_lemma_suite(&inst, &opts)? {
            match worst.iter_mut().find(|(n, _)| *n == c.name) {
                Some(w) => w.1 = w.1.max(c.violation),
                None => worst.push((c.name, c.violation)),
            }
        }
    }
    let pen = penalty_samples(p.penalty_samples, cfg.seed);
    let mut checks: Vec<CheckLine> = worst
        .iter()
        .map(|(n, v)| CheckLine::at_most(n.clone(), *v, p.tol_ord))
        .collect();
    checks.push(CheckLine::at_most(
        "penalty_sandwich_failures",
        pen.sandwich_failures as f64,
        0.0,
    ));
    checks.push(CheckLine::at_most(
        "penalty_monotone_failures",
        pen.monotone_failures as f64,
        0.0,
    ));
    Ok(Outcome {
        checks,
        results: json!({
            "instances": p.instances,
            "n": p.n,
            "penalty_samples": pen.samples,
        }),
        warnings: Vec::new(),
    })
}
