use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use qvi_core::extremal::{Branch, ExtremalOptions};
use qvi_core::vi::SolverOptions;
use qvi_core::{DiscreteSpace64, DualField64, Field64};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// A nodal function: analytic by name, or read from a CSV with columns
/// `x,value` on the interior nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    /// `amplitude · sin(mode π x)`.
    SinPi {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one_usize")]
        mode: usize,
    },
    Const {
        value: f64,
    },
    /// `a + b x`.
    Affine {
        a: f64,
        b: f64,
    },
    /// `height · (1 - ((x - center)/width)²)²` on `|x - center| < width`.
    Bump {
        #[serde(default = "half")]
        center: f64,
        #[serde(default = "quarter")]
        width: f64,
        #[serde(default = "one")]
        height: f64,
    },
    Csv {
        path: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn half() -> f64 {
    0.5
}
fn quarter() -> f64 {
    0.25
}

impl FunctionSpec {
    pub fn constant(value: f64) -> Self {
        FunctionSpec::Const { value }
    }

    fn analytic(&self) -> Option<Box<dyn Fn(f64) -> f64 + '_>> {
        match *self {
            FunctionSpec::SinPi { amplitude, mode } => {
                Some(Box::new(move |x| amplitude * (mode as f64 * PI * x).sin()))
            }
            FunctionSpec::Const { value } => Some(Box::new(move |_| value)),
            FunctionSpec::Affine { a, b } => Some(Box::new(move |x| a + b * x)),
            FunctionSpec::Bump {
                center,
                width,
                height,
            } => Some(Box::new(move |x| {
                let t = (x - center) / width;
                if t.abs() < 1.0 {
                    height * (1.0 - t * t).powi(2)
                } else {
                    0.0
                }
            })),
            FunctionSpec::Csv { .. } => None,
        }
    }

    /// Analytic value at `x`; CSV sources have none.
    pub fn at(&self, x: f64) -> Result<f64, CliError> {
        self.analytic()
            .map(|g| g(x))
            .ok_or_else(|| CliError::Config("a CSV field cannot be used as a coefficient".into()))
    }

    /// Nodal values on the interior nodes.
    pub fn field(&self, space: &DiscreteSpace64, base: &Path) -> Result<Field64, CliError> {
        match self {
            FunctionSpec::Csv { path } => read_field(space, &base.join(path)),
            other => Ok(space.interpolate(other.analytic().unwrap())),
        }
    }

    /// Load vector of a density: quadrature for analytic densities, lumped
    /// mass for nodal values read from CSV.
    pub fn load(&self, space: &DiscreteSpace64, base: &Path) -> Result<DualField64, CliError> {
        match self {
            FunctionSpec::Csv { path } => {
                Ok(space.lumped_load(&read_field(space, &base.join(path))?))
            }
            other => Ok(space.load_of(other.analytic().unwrap())),
        }
    }

    fn check_files(&self, base: &Path) -> Result<(), CliError> {
        if let FunctionSpec::Csv { path } = self {
            let p = base.join(path);
            if !p.is_file() {
                return Err(CliError::Config(format!(
                    "referenced file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    x: f64,
    value: f64,
}

pub fn read_field(space: &DiscreteSpace64, path: &Path) -> Result<Field64, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(&node) = space.nodes().get(i) {
            if (row.x - node).abs() > 1e-9 {
                return Err(CliError::Config(format!(
                    "{}: row {} has x = {} but node {} is at {}",
                    path.display(),
                    i + 1,
                    row.x,
                    i + 1,
                    node
                )));
            }
        }
        values.push(row.value);
    }
    if values.len() != space.n_interior() {
        return Err(CliError::Config(format!(
            "{}: {} rows for {} interior nodes",
            path.display(),
            values.len(),
            space.n_interior()
        )));
    }
    Field64::new(values).map_err(CliError::from_core)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleSpec {
    /// `Φ ≡ ψ`.
    Constant {
        psi: FunctionSpec,
    },
    /// `Φ(w) = offset + scale (-Δ)⁻¹ w`.
    InverseLaplacian {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "zero_fn")]
        offset: FunctionSpec,
    },
    Thermoforming,
}

fn zero_fn() -> FunctionSpec {
    FunctionSpec::constant(0.0)
}

/// Interval `[sub, sup]`: built from a bound `F` on the loads, or given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntervalSpec {
    pub bound: Option<FunctionSpec>,
    pub sub: Option<FunctionSpec>,
    pub sup: Option<FunctionSpec>,
    /// Largest ρ the supersolution certificate covers.
    pub rho0: f64,
}

impl Default for IntervalSpec {
    fn default() -> Self {
        Self {
            bound: None,
            sub: None,
            sup: None,
            rho0: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RhoSpec {
    /// Penalty parameter of single solves; `0` selects the VI.
    pub value: f64,
    pub rho0: f64,
    pub steps: usize,
    pub factor: f64,
    /// Explicit schedule; overrides `rho0`, `steps` and `factor`.
    pub schedule: Option<Vec<f64>>,
}

impl Default for RhoSpec {
    fn default() -> Self {
        Self {
            value: 0.0,
            rho0: 1.0,
            steps: 20,
            factor: 0.5,
            schedule: None,
        }
    }
}

impl RhoSpec {
    pub fn schedule(&self) -> Vec<f64> {
        match &self.schedule {
            Some(s) => s.clone(),
            None => (0..self.steps)
                .map(|k| self.rho0 * self.factor.powi(k as i32))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub pdas_c: f64,
    pub tol_fp: f64,
    pub max_n: usize,
    pub newton_tol: f64,
    /// Run fixed points to rounding level (needed for difference quotients).
    pub tight: bool,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let e = ExtremalOptions::<f64>::default();
        Self {
            pdas_c: e.solver.pdas_c,
            tol_fp: e.tol_fp,
            max_n: e.max_n,
            newton_tol: e.solver.newton_tol,
            tight: false,
        }
    }
}

impl SolverSpec {
    pub fn extremal(&self) -> ExtremalOptions<f64> {
        let base: ExtremalOptions<f64> = if self.tight {
            ExtremalOptions::tight()
        } else {
            ExtremalOptions::default()
        };
        let solver = SolverOptions {
            pdas_c: self.pdas_c,
            newton_tol: if self.tight {
                base.solver.newton_tol.min(self.newton_tol)
            } else {
                self.newton_tol
            },
            ..base.solver
        };
        ExtremalOptions {
            tol_fp: if self.tight {
                base.tol_fp.min(self.tol_fp)
            } else {
                self.tol_fp
            },
            max_n: if self.tight {
                self.max_n.max(base.max_n)
            } else {
                self.max_n
            },
            solver,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSpec {
    /// Argument `φ` of `S(f, φ)` and `T_ρ(f, φ)`.
    pub phi: FunctionSpec,
    pub tol_residual: f64,
}

impl Default for SolveSpec {
    fn default() -> Self {
        Self {
            phi: zero_fn(),
            tol_residual: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffSpec {
    pub direction: FunctionSpec,
    pub steps: Vec<f64>,
    pub factor: f64,
    pub floor: f64,
    pub tol_residual: f64,
}

impl Default for DiffSpec {
    fn default() -> Self {
        Self {
            direction: FunctionSpec::SinPi {
                amplitude: 1.0,
                mode: 1,
            },
            steps: vec![1e-2, 1e-3, 1e-4, 1e-5],
            factor: 0.6,
            floor: 1e-7,
            tol_residual: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzSpec {
    pub count: usize,
    /// Perturbation amplitudes are drawn log-uniformly from this range.
    pub min_amplitude: f64,
    pub max_amplitude: f64,
}

impl Default for LipschitzSpec {
    fn default() -> Self {
        Self {
            count: 20,
            min_amplitude: 1e-3,
            max_amplitude: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSpec {
    pub a: f64,
    pub b: f64,
    pub nu: f64,
    pub y_d: FunctionSpec,
    pub u_a: FunctionSpec,
    pub u_b: FunctionSpec,
    pub f0: Option<FunctionSpec>,
    pub schedule: Vec<f64>,
    pub tol_kkt: f64,
    /// Stopping tolerance when `certify` optimizes first. The regularity
    /// identity scales like the residual over `ν`, so it is tighter.
    pub certify_tol_kkt: f64,
    pub max_iter: usize,
    /// Terminal ρ at which the certificate is assembled.
    pub rho_certify: f64,
    /// Control to certify (`certify` only); optimized first when absent.
    pub f_star: Option<FunctionSpec>,
    pub bouligand_directions: usize,
}

impl Default for ControlSpec {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            nu: 1e-2,
            y_d: FunctionSpec::SinPi {
                amplitude: 0.5,
                mode: 1,
            },
            u_a: FunctionSpec::constant(0.0),
            u_b: FunctionSpec::constant(10.0),
            f0: None,
            schedule: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            tol_kkt: 1e-7,
            certify_tol_kkt: 1e-9,
            max_iter: 2000,
            rho_certify: 1e-6,
            f_star: None,
            bouligand_directions: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProptestSpec {
    pub instances: usize,
    pub n: usize,
    pub penalty_samples: usize,
    pub tol_ord: f64,
}

impl Default for ProptestSpec {
    fn default() -> Self {
        Self {
            instances: 50,
            n: 64,
            penalty_samples: 10_000,
            tol_ord: qvi_core::fem::TOL_ORD,
        }
    }
}

/// Everything a command needs. Every field has a default, so an empty file
/// (or no file) is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub coefficient: FunctionSpec,
    pub branch: Branch,
    pub seed: u64,
    pub out: PathBuf,
    pub obstacle: ObstacleSpec,
    pub source: FunctionSpec,
    pub interval: IntervalSpec,
    pub rho: RhoSpec,
    pub solver: SolverSpec,
    pub solve: SolveSpec,
    pub diff: DiffSpec,
    pub lipschitz: LipschitzSpec,
    pub control: ControlSpec,
    pub proptest: ProptestSpec,
    /// Directory relative CSV paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 64,
            coefficient: FunctionSpec::constant(1.0),
            branch: Branch::Max,
            seed: 0,
            out: PathBuf::from("qvi-out"),
            obstacle: ObstacleSpec::Constant {
                psi: FunctionSpec::constant(0.2),
            },
            source: FunctionSpec::constant(10.0),
            interval: IntervalSpec::default(),
            rho: RhoSpec::default(),
            solver: SolverSpec::default(),
            solve: SolveSpec::default(),
            diff: DiffSpec::default(),
            lipschitz: LipschitzSpec::default(),
            control: ControlSpec::default(),
            proptest: ProptestSpec::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Referenced files exist, tolerances and sizes are positive, schedules decrease.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |what: &str| Err(CliError::Config(format!("{what} must be positive")));
        if self.n < 2 {
            return Err(CliError::Config(format!(
                "n must be at least 2, got {}",
                self.n
            )));
        }
        let positive = [
            ("solver.pdas_c", self.solver.pdas_c),
            ("solver.tol_fp", self.solver.tol_fp),
            ("solver.newton_tol", self.solver.newton_tol),
            ("solve.tol_residual", self.solve.tol_residual),
            ("diff.factor", self.diff.factor),
            ("diff.floor", self.diff.floor),
            ("diff.tol_residual", self.diff.tol_residual),
            ("control.nu", self.control.nu),
            ("control.tol_kkt", self.control.tol_kkt),
            ("control.certify_tol_kkt", self.control.certify_tol_kkt),
            ("control.rho_certify", self.control.rho_certify),
            ("proptest.tol_ord", self.proptest.tol_ord),
            ("interval.rho0", self.interval.rho0),
            ("rho.rho0", self.rho.rho0),
            ("lipschitz.min_amplitude", self.lipschitz.min_amplitude),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name);
            }
        }
        if self.solver.max_n == 0 || self.control.max_iter == 0 {
            return Err(CliError::Config("iteration limits must be positive".into()));
        }
        if self.lipschitz.max_amplitude < self.lipschitz.min_amplitude {
            return Err(CliError::Config(
                "lipschitz.max_amplitude is below min_amplitude".into(),
            ));
        }
        if !(self.rho.value >= 0.0) {
            return Err(CliError::Config("rho.value must be nonnegative".into()));
        }
        if !(self.rho.factor > 0.0 && self.rho.factor < 1.0) {
            return Err(CliError::Config("rho.factor must lie in (0, 1)".into()));
        }
        for (name, s) in [
            ("rho schedule", self.rho.schedule()),
            ("control.schedule", self.control.schedule.clone()),
        ] {
            if s.is_empty() || s.iter().any(|&r| !(r > 0.0)) || s.windows(2).any(|w| !(w[1] < w[0]))
            {
                return Err(CliError::Config(format!(
                    "{name} must be nonempty, positive and strictly decreasing"
                )));
            }
        }
        if self.diff.steps.is_empty() || self.diff.steps.iter().any(|&s| !(s > 0.0)) {
            return Err(CliError::Config(
                "diff.steps must be nonempty and positive".into(),
            ));
        }
        if matches!(self.coefficient, FunctionSpec::Csv { .. }) {
            return Err(CliError::Config("the coefficient must be analytic".into()));
        }
        let mut fns: Vec<&FunctionSpec> = vec![
            &self.source,
            &self.solve.phi,
            &self.diff.direction,
            &self.control.y_d,
            &self.control.u_a,
            &self.control.u_b,
        ];
        fns.extend(self.interval.bound.iter());
        fns.extend(self.interval.sub.iter());
        fns.extend(self.interval.sup.iter());
        fns.extend(self.control.f0.iter());
        fns.extend(self.control.f_star.iter());
        match &self.obstacle {
            ObstacleSpec::Constant { psi } => fns.push(psi),
            ObstacleSpec::InverseLaplacian { offset, .. } => fns.push(offset),
            ObstacleSpec::Thermoforming => {}
        }
        for f in fns {
            f.check_files(&self.base_dir)?;
        }
        if self.interval.bound.is_some()
            && (self.interval.sub.is_some() || self.interval.sup.is_some())
        {
            return Err(CliError::Config(
                "give either interval.bound or interval.sub/sup, not both".into(),
            ));
        }
        if self.interval.sub.is_some() != self.interval.sup.is_some() {
            return Err(CliError::Config(
                "interval.sub and interval.sup go together".into(),
            ));
        }
        Ok(())
    }
}
