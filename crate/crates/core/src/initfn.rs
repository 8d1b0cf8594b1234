//! Constrained initial functions on `[−τ, 0]` sharing a given headpoint.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semidisc::SemiDiscMap;
use crate::systems::DdeSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    /// Every sample equals the headpoint.
    Constant,
    /// Straight line from the equilibrium at `t = −τ` to the headpoint.
    Linear,
    /// At the equilibrium until `t = 0`, where it jumps to the headpoint.
    Jump,
    /// Undamped, uncontrolled modal oscillation about the equilibrium ending
    /// at the headpoint.
    #[serde(rename = "freevib")]
    #[default]
    FreeVibration,
}

impl InitialKind {
    pub const ALL: [InitialKind; 4] = [
        InitialKind::Constant,
        InitialKind::Linear,
        InitialKind::Jump,
        InitialKind::FreeVibration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InitialKind::Constant => "constant",
            InitialKind::Linear => "linear",
            InitialKind::Jump => "jump",
            InitialKind::FreeVibration => "freevib",
        }
    }
}

impl fmt::Display for InitialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitialKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(InitialKind::Constant),
            "linear" => Ok(InitialKind::Linear),
            "jump" => Ok(InitialKind::Jump),
            "freevib" | "free-vibration" => Ok(InitialKind::FreeVibration),
            other => Err(Error::Config(format!(
                "unknown initial function '{other}' (expected constant|linear|jump|freevib)"
            ))),
        }
    }
}

/// Samples at `t = −r·h, …, −h, 0`, oldest first; the last one is the
/// headpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialHistory {
    kind: InitialKind,
    r: usize,
    h: f64,
    samples: Vec<Vec<f64>>,
}

impl InitialHistory {
    /// Wraps an arbitrary pre-sampled history (`r + 1` samples, oldest first).
    pub fn from_samples(kind: InitialKind, h: f64, samples: Vec<Vec<f64>>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput(
                "history needs at least two samples".into(),
            ));
        }
        Ok(InitialHistory {
            kind,
            r: samples.len() - 1,
            h,
            samples,
        })
    }

    pub fn kind(&self) -> InitialKind {
        self.kind
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn headpoint(&self) -> &[f64] {
        self.samples.last().expect("non-empty")
    }
}

/// Value of the initial function of `kind` at time `t ∈ [−τ, 0]`.
pub fn history_value(
    kind: InitialKind,
    headpoint: &[f64],
    system: &DdeSystem,
    t: f64,
) -> Result<Vec<f64>> {
    let eq = system.equilibrium();
    if headpoint.len() != eq.len() {
        return Err(Error::Dimension(format!(
            "headpoint has length {}, system dimension is {}",
            headpoint.len(),
            eq.len()
        )));
    }
    if headpoint.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "headpoint has non-finite entries".into(),
        ));
    }
    if t >= 0.0 {
        return Ok(headpoint.to_vec());
    }
    match kind {
        InitialKind::Constant => Ok(headpoint.to_vec()),
        InitialKind::Linear => {
            let w = 1.0 + t / system.tau();
            Ok(eq
                .iter()
                .zip(headpoint)
                .map(|(e, x)| e + w * (x - e))
                .collect())
        }
        InitialKind::Jump => Ok(eq.to_vec()),
        InitialKind::FreeVibration => free_vibration(headpoint, system, t),
    }
}

fn free_vibration(headpoint: &[f64], system: &DdeSystem, t: f64) -> Result<Vec<f64>> {
    let basis = system.modal_basis().ok_or_else(|| {
        Error::Unsupported(format!(
            "free-vibration history needs a modal decomposition, '{}' has none",
            system.name()
        ))
    })?;
    let n = basis.dof();
    let eq = system.equilibrium();
    let offset: Vec<f64> = headpoint.iter().zip(eq).map(|(x, e)| x - e).collect();
    let q0 = &basis.inverse_shapes * DVector::from_column_slice(&offset[..n]);
    let v0 = &basis.inverse_shapes * DVector::from_column_slice(&offset[n..]);

    let mut q = DVector::zeros(n);
    let mut v = DVector::zeros(n);
    for i in 0..n {
        let lambda = basis.eigenvalues[i];
        let (qi, vi) = (q0[i], v0[i]);
        (q[i], v[i]) = if lambda > 1e-14 {
            let w = lambda.sqrt();
            let (s, c) = (w * t).sin_cos();
            (qi * c + vi / w * s, -qi * w * s + vi * c)
        } else if lambda < -1e-14 {
            let k = (-lambda).sqrt();
            let (s, c) = ((k * t).sinh(), (k * t).cosh());
            (qi * c + vi / k * s, qi * k * s + vi * c)
        } else {
            (qi + vi * t, vi)
        };
    }
    let x = &basis.shapes * q;
    let xd = &basis.shapes * v;
    Ok(eq
        .iter()
        .zip(x.iter().chain(xd.iter()))
        .map(|(e, d)| e + d)
        .collect())
}

/// Samples the initial function of `kind` with the map's step; the final
/// sample is the headpoint exactly.
pub fn build_initial_history(
    kind: InitialKind,
    headpoint: &[f64],
    map: &SemiDiscMap,
) -> Result<InitialHistory> {
    let system = map.system();
    let (r, h) = (map.r(), map.h());
    let mut samples = Vec::with_capacity(r + 1);
    for k in (1..=r).rev() {
        samples.push(history_value(kind, headpoint, system, -(k as f64) * h)?);
    }
    samples.push(history_value(kind, headpoint, system, 0.0)?);
    Ok(InitialHistory {
        kind,
        r,
        h,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{duffing, pendulum_nltva, turning_2dof, DuffingParams, Nonlinearity};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;
    use std::sync::Arc;

    fn unit_oscillator(tau: f64) -> Arc<DdeSystem> {
        // ẍ = −x, equilibrium at the origin
        let g: Nonlinearity = Arc::new(|_, _, out| out.fill(0.0));
        let sys = DdeSystem::new(
            "osc",
            dmatrix![0.0, 1.0; -1.0, 0.0],
            dmatrix![0.0, 0.0; 0.0, 0.0],
            tau,
            vec![0.0, 0.0],
            g,
        )
        .unwrap()
        .with_mechanics(&dmatrix![1.0], &dmatrix![1.0])
        .unwrap();
        Arc::new(sys)
    }

    #[test]
    fn parse_kinds() {
        for k in InitialKind::ALL {
            assert_eq!(k.as_str().parse::<InitialKind>().unwrap(), k);
        }
        assert!("sine".parse::<InitialKind>().is_err());
    }

    #[test]
    fn constant_history() {
        let map =
            SemiDiscMap::new(Arc::new(duffing(DuffingParams::default()).unwrap()), 5).unwrap();
        let hist = build_initial_history(InitialKind::Constant, &[0.5, 0.5], &map).unwrap();
        assert_eq!(hist.samples().len(), 6);
        assert!(hist.samples().iter().all(|s| s == &[0.5, 0.5]));
    }

    #[test]
    fn jump_history() {
        let map =
            SemiDiscMap::new(Arc::new(duffing(DuffingParams::default()).unwrap()), 4).unwrap();
        let hist = build_initial_history(InitialKind::Jump, &[-1.0, 2.0], &map).unwrap();
        let s = hist.samples();
        assert!(s[..4].iter().all(|x| x == &[-1.0, 0.0]));
        assert_eq!(s[4], vec![-1.0, 2.0]);
    }

    #[test]
    fn quarter_period_free_vibration() {
        let sys = unit_oscillator(FRAC_PI_2);
        let y = history_value(InitialKind::FreeVibration, &[1.0, 0.0], &sys, -FRAC_PI_2).unwrap();
        assert!((y[0]).abs() < 1e-15);
        assert_relative_eq!(y[1], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn linear_and_jump_start_at_equilibrium() {
        let sys = duffing(DuffingParams::default()).unwrap();
        for kind in [InitialKind::Linear, InitialKind::Jump] {
            let y = history_value(kind, &[0.3, 1.7], &sys, -sys.tau()).unwrap();
            assert!((y[0] + 1.0).abs() < 1e-15 && y[1].abs() < 1e-15);
        }
    }

    #[test]
    fn free_vibration_needs_modes() {
        let g: Nonlinearity = Arc::new(|_, _, out| out.fill(0.0));
        let sys = DdeSystem::new("bare", dmatrix![-1.0], dmatrix![0.0], 1.0, vec![0.0], g).unwrap();
        let err = history_value(InitialKind::FreeVibration, &[1.0], &sys, -0.5).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn pendulum_history_grows_backwards_along_unstable_mode() {
        // uncontrolled upright pendulum: one mode is hyperbolic, λq² + q̇² is still conserved
        let sys = pendulum_nltva(Default::default()).unwrap();
        let basis = sys.modal_basis().unwrap().clone();
        let head = [0.2, -0.1, 0.3, 0.05];
        let invariant = |y: &[f64]| -> Vec<f64> {
            let q = &basis.inverse_shapes * DVector::from_column_slice(&y[..2]);
            let v = &basis.inverse_shapes * DVector::from_column_slice(&y[2..]);
            (0..2)
                .map(|i| basis.eigenvalues[i] * q[i] * q[i] + v[i] * v[i])
                .collect()
        };
        let e0 = invariant(&head);
        for k in 1..=10 {
            let y =
                history_value(InitialKind::FreeVibration, &head, &sys, -0.05 * k as f64).unwrap();
            let e = invariant(&y);
            for i in 0..2 {
                assert!((e[i] - e0[i]).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn all_kinds_share_headpoint(x in -3.0f64..3.0, v in -3.0f64..3.0, r in 1usize..40) {
            let map = SemiDiscMap::new(Arc::new(duffing(DuffingParams::default()).unwrap()), r).unwrap();
            for kind in InitialKind::ALL {
                let hist = build_initial_history(kind, &[x, v], &map).unwrap();
                prop_assert_eq!(hist.samples().len(), r + 1);
                prop_assert_eq!(hist.headpoint(), &[x, v]);
            }
        }

        #[test]
        fn free_vibration_conserves_modal_energy(
            head in prop::collection::vec(-2.0f64..2.0, 4), r in 2usize..40,
        ) {
            let sys = Arc::new(turning_2dof(Default::default()).unwrap());
            let modes = sys.modes().unwrap().clone();
            let map = SemiDiscMap::new(sys, r).unwrap();
            let hist = build_initial_history(InitialKind::FreeVibration, &head, &map).unwrap();
            let energy = |y: &[f64]| -> Vec<f64> {
                let q = &modes.inverse_shapes * DVector::from_column_slice(&y[..2]);
                let v = &modes.inverse_shapes * DVector::from_column_slice(&y[2..]);
                (0..2).map(|i| (modes.frequencies[i] * q[i]).powi(2) + v[i] * v[i]).collect()
            };
            let e0 = energy(&head);
            for s in hist.samples() {
                let e = energy(s);
                for i in 0..2 {
                    prop_assert!((e[i] - e0[i]).abs() < 1e-10);
                }
            }
        }
    }
}
