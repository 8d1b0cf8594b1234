//! First-order delay models `ẏ = A y(t) + B y(t−τ) + g(y(t), y(t−τ))` and the
//! four built-in mechanical case studies.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{dmatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{modal_basis, ModalBasis, ModeSet, RealMatrix};

/// Writes `g(y_now, y_delayed)` into the output slice.
pub type Nonlinearity = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

const EQUILIBRIUM_TOL: f64 = 1e-10;

#[derive(Clone)]
pub struct DdeSystem {
    name: String,
    a: RealMatrix,
    b: RealMatrix,
    nonlinearity: Nonlinearity,
    tau: f64,
    equilibrium: Vec<f64>,
    modal: Option<ModalBasis>,
    modes: Option<ModeSet>,
}

impl fmt::Debug for DdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DdeSystem")
            .field("name", &self.name)
            .field("a", &self.a)
            .field("b", &self.b)
            .field("tau", &self.tau)
            .field("equilibrium", &self.equilibrium)
            .field("modes", &self.modes)
            .finish_non_exhaustive()
    }
}

impl DdeSystem {
    /// Builds a custom system. The equilibrium must satisfy the governing
    /// equation with both arguments at the equilibrium.
    pub fn new(
        name: impl Into<String>,
        a: RealMatrix,
        b: RealMatrix,
        tau: f64,
        equilibrium: Vec<f64>,
        nonlinearity: Nonlinearity,
    ) -> Result<Self> {
        let dim = equilibrium.len();
        if dim == 0 {
            return Err(Error::InvalidInput(
                "state dimension must be positive".into(),
            ));
        }
        for (m, what) in [(&a, "A"), (&b, "B")] {
            if m.shape() != (dim, dim) {
                return Err(Error::Dimension(format!(
                    "{what} is {:?}, expected {dim}x{dim}",
                    m.shape()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{what} has non-finite entries"
                )));
            }
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delay must be positive, got {tau}"
            )));
        }
        if equilibrium.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "equilibrium has non-finite entries".into(),
            ));
        }
        let system = DdeSystem {
            name: name.into(),
            a,
            b,
            nonlinearity,
            tau,
            equilibrium,
            modal: None,
            modes: None,
        };
        let residual = system.equilibrium_residual();
        if !(residual < EQUILIBRIUM_TOL) {
            return Err(Error::InvalidInput(format!(
                "equilibrium residual {residual:e} exceeds {EQUILIBRIUM_TOL:e}"
            )));
        }
        Ok(system)
    }

    /// Attaches the undamped, undelayed, uncontrolled mass and stiffness
    /// matrices of a mechanical system whose state is ordered as
    /// `(positions, velocities)`.
    pub fn with_mechanics(mut self, mass: &RealMatrix, stiffness: &RealMatrix) -> Result<Self> {
        if 2 * mass.nrows() != self.dim() {
            return Err(Error::Dimension(format!(
                "{} degrees of freedom do not match state dimension {}",
                mass.nrows(),
                self.dim()
            )));
        }
        let basis = modal_basis(mass, stiffness)?;
        self.modes = ModeSet::try_from(basis.clone()).ok();
        self.modal = Some(basis);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.equilibrium.len()
    }

    pub fn a(&self) -> &RealMatrix {
        &self.a
    }

    pub fn b(&self) -> &RealMatrix {
        &self.b
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn equilibrium(&self) -> &[f64] {
        &self.equilibrium
    }

    /// Vibration modes of the undamped linearization, when every mode
    /// oscillates.
    pub fn modes(&self) -> Option<&ModeSet> {
        self.modes.as_ref()
    }

    /// Modal decomposition of the undamped linearization, including modes
    /// that grow exponentially.
    pub fn modal_basis(&self) -> Option<&ModalBasis> {
        self.modal.as_ref()
    }

    pub fn nonlinearity_into(&self, now: &[f64], delayed: &[f64], out: &mut [f64]) {
        (self.nonlinearity)(now, delayed, out)
    }

    pub fn nonlinearity(&self, now: &[f64], delayed: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.nonlinearity_into(now, delayed, &mut out);
        out
    }

    /// Full right-hand side of the governing equation.
    pub fn rhs(&self, now: &[f64], delayed: &[f64]) -> Vec<f64> {
        let mut out = self.nonlinearity(now, delayed);
        let now_v = DVector::from_column_slice(now);
        let del_v = DVector::from_column_slice(delayed);
        let lin = &self.a * now_v + &self.b * del_v;
        for (o, l) in out.iter_mut().zip(lin.iter()) {
            *o += l;
        }
        out
    }

    pub fn equilibrium_residual(&self) -> f64 {
        let r = self.rhs(&self.equilibrium, &self.equilibrium);
        r.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuffingParams {
    pub a: f64,
    pub zeta: f64,
    pub tau: f64,
}

impl Default for DuffingParams {
    fn default() -> Self {
        DuffingParams {
            a: 1.0,
            zeta: 0.1,
            tau: 0.1,
        }
    }
}

/// `ẍ + 2ζẋ − x(t−τ) + a x³ = 0`, desired equilibrium `(−1/√a, 0)`.
///
/// The cubic term is linearized about the desired equilibrium so the
/// restoring stiffness `3a·x₁²` sits in `A`; the remainder kept in `g` is
/// `−a x³ + 3a x₁² x`, which is odd and flat at the equilibrium.
pub fn duffing(params: DuffingParams) -> Result<DdeSystem> {
    let DuffingParams { a, zeta, tau } = params;
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cubic coefficient a must be positive, got {a}"
        )));
    }
    if !(zeta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "damping ratio must be nonnegative, got {zeta}"
        )));
    }
    let x_eq = -1.0 / a.sqrt();
    let stiff = 3.0 * a * x_eq * x_eq;
    let am = dmatrix![0.0, 1.0; -stiff, -2.0 * zeta];
    let bm = dmatrix![0.0, 0.0; 1.0, 0.0];
    let g: Nonlinearity = Arc::new(move |y, _yd, out| {
        let x = y[0];
        out[0] = 0.0;
        out[1] = -a * x * x * x + stiff * x;
    });
    DdeSystem::new("duffing", am, bm, tau, vec![x_eq, 0.0], g)?
        // delayed stiffness taken as instantaneous: k = 3a·x₁² − 1
        .with_mechanics(&dmatrix![1.0], &dmatrix![stiff - 1.0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Turning1Params {
    pub zeta1: f64,
    pub p: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub tau: f64,
}

impl Default for Turning1Params {
    fn default() -> Self {
        Turning1Params {
            zeta1: 0.05,
            p: 0.1,
            eta2: -0.5209,
            eta3: 0.6547,
            tau: 9.0,
        }
    }
}

impl Turning1Params {
    /// Dimensionless spindle speed `2π/τ`.
    pub fn spindle_speed(&self) -> f64 {
        2.0 * PI / self.tau
    }
}

fn cutting_remainder(p: f64, eta2: f64, eta3: f64, now: f64, delayed: f64) -> f64 {
    let d = delayed - now;
    p * (eta2 * d * d + eta3 * d * d * d)
}

/// Single-DoF turning with regenerative cutting force
/// `ẍ₁ + 2ζ₁ẋ₁ + x₁ = p(Δ + η₂Δ² + η₃Δ³)`, `Δ = x₁(t−τ) − x₁(t)`.
pub fn turning_1dof(params: Turning1Params) -> Result<DdeSystem> {
    let Turning1Params {
        zeta1,
        p,
        eta2,
        eta3,
        tau,
    } = params;
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delay must be positive, got {tau}"
        )));
    }
    if !(p >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "chip width must be nonnegative, got {p}"
        )));
    }
    let am = dmatrix![0.0, 1.0; -(1.0 + p), -2.0 * zeta1];
    let bm = dmatrix![0.0, 0.0; p, 0.0];
    let g: Nonlinearity = Arc::new(move |y, yd, out| {
        out[0] = 0.0;
        out[1] = cutting_remainder(p, eta2, eta3, y[0], yd[0]);
    });
    DdeSystem::new("turning1", am, bm, tau, vec![0.0, 0.0], g)?
        .with_mechanics(&dmatrix![1.0], &dmatrix![1.0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Turning2Params {
    pub tool: Turning1Params,
    pub mu: f64,
    pub gamma: f64,
    pub zeta2: f64,
    pub alpha3: f64,
}

impl Default for Turning2Params {
    fn default() -> Self {
        Turning2Params {
            tool: Turning1Params::default(),
            mu: 0.05,
            gamma: 1.069,
            zeta2: 0.1437,
            alpha3: 0.0,
        }
    }
}

/// Turning tool with a nonlinear tuned vibration absorber; state
/// `(x₁, x₂, ẋ₁, ẋ₂)`.
pub fn turning_2dof(params: Turning2Params) -> Result<DdeSystem> {
    let Turning2Params {
        tool,
        mu,
        gamma,
        zeta2,
        alpha3,
    } = params;
    let Turning1Params {
        zeta1,
        p,
        eta2,
        eta3,
        tau,
    } = tool;
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mass ratio must be positive, got {mu}"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "frequency ratio must be positive, got {gamma}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delay must be positive, got {tau}"
        )));
    }
    if !(p >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "chip width must be nonnegative, got {p}"
        )));
    }
    let k12 = gamma * gamma * mu;
    let c12 = 2.0 * zeta2 * gamma * mu;
    #[rustfmt::skip]
    let am = dmatrix![
        0.0, 0.0, 1.0, 0.0;
        0.0, 0.0, 0.0, 1.0;
        -(1.0 + k12 + p), k12, -(2.0 * zeta1 + c12), c12;
        gamma * gamma, -gamma * gamma, 2.0 * zeta2 * gamma, -2.0 * zeta2 * gamma
    ];
    let mut bm = RealMatrix::zeros(4, 4);
    bm[(2, 0)] = p;
    let g: Nonlinearity = Arc::new(move |y, yd, out| {
        let rel = y[0] - y[1];
        let spring = alpha3 * rel * rel * rel;
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = cutting_remainder(p, eta2, eta3, y[0], yd[0]) - spring;
        out[3] = spring / mu;
    });
    let mass = dmatrix![1.0, 0.0; 0.0, mu];
    let stiffness = dmatrix![1.0 + k12, -k12; -k12, k12];
    DdeSystem::new("turning2", am, bm, tau, vec![0.0; 4], g)?.with_mechanics(&mass, &stiffness)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    pub mu: f64,
    pub gamma: f64,
    pub zeta2: f64,
    pub p: f64,
    pub d: f64,
    pub tau: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            mu: 0.1,
            gamma: 2.3,
            zeta2: 0.174,
            p: 1.4,
            d: 2.8,
            tau: 0.5,
        }
    }
}

/// Inverted pendulum with absorber under delayed PD control
/// `−pφ₁(t−τ) − dφ̇₁(t−τ)`; state `(φ₁, φ₂, φ̇₁, φ̇₂)`.
///
/// Gravity is linearized in `A` (`+φ₁`), and `g` carries the exact remainder
/// `sin φ₁ − φ₁`.
pub fn pendulum_nltva(params: PendulumParams) -> Result<DdeSystem> {
    let PendulumParams {
        mu,
        gamma,
        zeta2,
        p,
        d,
        tau,
    } = params;
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mass ratio must be positive, got {mu}"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "frequency ratio must be positive, got {gamma}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delay must be positive, got {tau}"
        )));
    }
    let k12 = mu * gamma * gamma;
    let c12 = 2.0 * zeta2 * mu * gamma;
    #[rustfmt::skip]
    let am = dmatrix![
        0.0, 0.0, 1.0, 0.0;
        0.0, 0.0, 0.0, 1.0;
        1.0 - k12, k12, -c12, c12;
        gamma * gamma, -gamma * gamma, 2.0 * zeta2 * gamma, -2.0 * zeta2 * gamma
    ];
    let mut bm = RealMatrix::zeros(4, 4);
    bm[(2, 0)] = -p;
    bm[(2, 2)] = -d;
    let g: Nonlinearity = Arc::new(|y, _yd, out| {
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = y[0].sin() - y[0];
        out[3] = 0.0;
    });
    let mass = dmatrix![1.0, 0.0; 0.0, mu];
    let stiffness = dmatrix![-1.0 + k12, -k12; -k12, k12];
    DdeSystem::new("pendulum", am, bm, tau, vec![0.0; 4], g)?.with_mechanics(&mass, &stiffness)
}

/// Names accepted by [`build_named`].
pub const BUILTIN_SYSTEMS: [&str; 4] = ["duffing", "turning1", "turning2", "pendulum"];

/// Parameter names and default values for a built-in system. `omega_d` is an
/// alias that sets `tau = 2π/omega_d` for the turning models.
pub fn default_params(system: &str) -> Result<BTreeMap<String, f64>> {
    let pairs: Vec<(&str, f64)> = match system {
        "duffing" => {
            let d = DuffingParams::default();
            vec![("a", d.a), ("zeta", d.zeta), ("tau", d.tau)]
        }
        "turning1" => {
            let t = Turning1Params::default();
            vec![
                ("zeta1", t.zeta1),
                ("p", t.p),
                ("eta2", t.eta2),
                ("eta3", t.eta3),
                ("tau", t.tau),
            ]
        }
        "turning2" => {
            let t = Turning2Params::default();
            vec![
                ("zeta1", t.tool.zeta1),
                ("p", t.tool.p),
                ("eta2", t.tool.eta2),
                ("eta3", t.tool.eta3),
                ("tau", t.tool.tau),
                ("mu", t.mu),
                ("gamma", t.gamma),
                ("zeta2", t.zeta2),
                ("alpha3", t.alpha3),
            ]
        }
        "pendulum" => {
            let q = PendulumParams::default();
            vec![
                ("mu", q.mu),
                ("gamma", q.gamma),
                ("zeta2", q.zeta2),
                ("p", q.p),
                ("d", q.d),
                ("tau", q.tau),
            ]
        }
        other => return Err(Error::Config(format!("unknown system '{other}'"))),
    };
    Ok(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

/// Whether `name` can be set on `system` (including the `omega_d` alias).
pub fn accepts_param(system: &str, name: &str) -> Result<bool> {
    let defaults = default_params(system)?;
    Ok(defaults.contains_key(name)
        || (name == "omega_d" && matches!(system, "turning1" | "turning2")))
}

/// Overlays `overrides` on the defaults of `system`, resolving `omega_d`.
pub fn resolve_params(
    system: &str,
    overrides: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>> {
    let mut params = default_params(system)?;
    for (k, &v) in overrides {
        if !accepts_param(system, k)? {
            return Err(Error::Config(format!(
                "system '{system}' has no parameter '{k}'"
            )));
        }
        if k == "omega_d" {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "omega_d must be positive, got {v}"
                )));
            }
            params.insert("tau".into(), 2.0 * PI / v);
        } else {
            params.insert(k.clone(), v);
        }
    }
    Ok(params)
}

pub fn build_named(system: &str, overrides: &BTreeMap<String, f64>) -> Result<DdeSystem> {
    let p = resolve_params(system, overrides)?;
    let get = |k: &str| p[k];
    match system {
        "duffing" => duffing(DuffingParams {
            a: get("a"),
            zeta: get("zeta"),
            tau: get("tau"),
        }),
        "turning1" => turning_1dof(Turning1Params {
            zeta1: get("zeta1"),
            p: get("p"),
            eta2: get("eta2"),
            eta3: get("eta3"),
            tau: get("tau"),
        }),
        "turning2" => turning_2dof(Turning2Params {
            tool: Turning1Params {
                zeta1: get("zeta1"),
                p: get("p"),
                eta2: get("eta2"),
                eta3: get("eta3"),
                tau: get("tau"),
            },
            mu: get("mu"),
            gamma: get("gamma"),
            zeta2: get("zeta2"),
            alpha3: get("alpha3"),
        }),
        "pendulum" => pendulum_nltva(PendulumParams {
            mu: get("mu"),
            gamma: get("gamma"),
            zeta2: get("zeta2"),
            p: get("p"),
            d: get("d"),
            tau: get("tau"),
        }),
        other => Err(Error::Config(format!("unknown system '{other}'"))),
    }
}
