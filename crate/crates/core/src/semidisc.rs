//! Semi-discretization: the delayed and nonlinear terms are frozen over each
//! sampling interval and the linear part is integrated exactly, giving the map
//!
//! ```text
//! y_{i+1} = P y_i + Q B y_{i−r} + Q g(y_i, y_{i−r}),   P = e^{Ah},  Q = ∫₀ʰ e^{A(h−s)} ds
//! ```
//!
//! with `h = τ / (r + ½)` so that the mean discretized delay equals `τ`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::initfn::InitialHistory;
use crate::numerics::{exp_integral, matrix_exponential, RealMatrix};
use crate::systems::DdeSystem;

/// Magnitude beyond which a state is treated as numerically diverged.
pub const OVERFLOW_LIMIT: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct SemiDiscMap {
    system: Arc<DdeSystem>,
    r: usize,
    h: f64,
    p: RealMatrix,
    q: RealMatrix,
    qb: RealMatrix,
    // row-major copies for the stepping loop
    p_rows: Vec<f64>,
    q_rows: Vec<f64>,
    qb_rows: Vec<f64>,
}

fn row_major(m: &RealMatrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl SemiDiscMap {
    pub fn new(system: Arc<DdeSystem>, r: usize) -> Result<Self> {
        if r < 1 {
            return Err(Error::InvalidParameter(
                "sampling delay number must be at least 1".into(),
            ));
        }
        let h = system.tau() / (r as f64 + 0.5);
        let p = matrix_exponential(system.a(), h)?;
        let q = exp_integral(system.a(), h)?;
        let qb = &q * system.b();
        Ok(SemiDiscMap {
            p_rows: row_major(&p),
            q_rows: row_major(&q),
            qb_rows: row_major(&qb),
            system,
            r,
            h,
            p,
            q,
            qb,
        })
    }

    pub fn system(&self) -> &DdeSystem {
        &self.system
    }

    pub fn system_arc(&self) -> &Arc<DdeSystem> {
        &self.system
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn p(&self) -> &RealMatrix {
        &self.p
    }

    pub fn q(&self) -> &RealMatrix {
        &self.q
    }

    pub fn qb(&self) -> &RealMatrix {
        &self.qb
    }

    /// Largest eigenvalue modulus of the map with `g = 0`, acting on the
    /// stacked state `(y_i, y_{i−1}, …, y_{i−r})`. Values above 1 mean the
    /// discretized equilibrium is linearly unstable.
    pub fn linear_spectral_radius(&self) -> f64 {
        let n = self.dim();
        let size = (self.r + 1) * n;
        let mut m = RealMatrix::zeros(size, size);
        m.view_mut((0, 0), (n, n)).copy_from(&self.p);
        m.view_mut((0, self.r * n), (n, n)).copy_from(&self.qb);
        for k in 1..=self.r {
            for i in 0..n {
                m[(k * n + i, (k - 1) * n + i)] = 1.0;
            }
        }
        m.complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Advances `state` by one step. Returns `false` (leaving the state
    /// advanced) when the new head is non-finite or exceeds
    /// [`OVERFLOW_LIMIT`].
    pub fn step(&self, state: &mut DelayedState) -> bool {
        let n = self.dim();
        debug_assert_eq!(state.dim, n);
        let len = self.r + 1;
        let head = state.head;
        let oldest = (head + 1) % len;
        let (now, delayed) = (head * n, oldest * n);

        let (g, next) = state.scratch.split_at_mut(n);
        self.system.nonlinearity_into(
            &state.buf[now..now + n],
            &state.buf[delayed..delayed + n],
            g,
        );
        let mut ok = true;
        for i in 0..n {
            let row = i * n;
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.p_rows[row + j] * state.buf[now + j]
                    + self.qb_rows[row + j] * state.buf[delayed + j]
                    + self.q_rows[row + j] * g[j];
            }
            ok &= acc.is_finite() && acc.abs() <= OVERFLOW_LIMIT;
            next[i] = acc;
        }
        state.buf[delayed..delayed + n].copy_from_slice(next);
        state.head = oldest;
        state.steps += 1;
        state.time = state.steps as f64 * self.h;
        ok
    }

    /// Runs the map from `initial`, calling `observer` with the headpoint at
    /// `t = 0` and after every step, until it returns [`Control::Stop`] or the
    /// state blows up. Nothing is stored.
    pub fn run<F>(&self, initial: &InitialHistory, mut observer: F) -> Result<RunSummary>
    where
        F: FnMut(f64, &[f64]) -> Control,
    {
        let mut state = DelayedState::from_history(self, initial)?;
        if observer(0.0, state.head()) == Control::Stop {
            return Ok(RunSummary {
                steps: 0,
                end: RunEnd::Stopped,
            });
        }
        loop {
            if !self.step(&mut state) {
                return Ok(RunSummary {
                    steps: state.steps,
                    end: RunEnd::NonFinite,
                });
            }
            if observer(state.time, state.head()) == Control::Stop {
                return Ok(RunSummary {
                    steps: state.steps,
                    end: RunEnd::Stopped,
                });
            }
        }
    }

    /// Like [`run`](Self::run) but keeps every sample, history included.
    pub fn simulate<F>(
        &self,
        initial: &InitialHistory,
        mut observer: F,
    ) -> Result<SampledTrajectory>
    where
        F: FnMut(f64, &[f64]) -> Control,
    {
        let mut samples: Vec<Vec<f64>> = initial.samples().to_vec();
        let history_len = samples.len();
        let summary = self.run(initial, |t, y| {
            if t > 0.0 {
                samples.push(y.to_vec());
            }
            observer(t, y)
        })?;
        Ok(SampledTrajectory {
            h: self.h,
            history_len,
            samples,
            end: summary.end,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunEnd {
    Stopped,
    /// A component became non-finite or exceeded [`OVERFLOW_LIMIT`].
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub steps: usize,
    pub end: RunEnd,
}

/// States at `t = −r·h, …, 0, h, 2h, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory {
    pub h: f64,
    pub history_len: usize,
    pub samples: Vec<Vec<f64>>,
    pub end: RunEnd,
}

impl SampledTrajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.samples.last().expect("history is never empty")
    }

    /// Number of steps taken after `t = 0`.
    pub fn steps(&self) -> usize {
        self.samples.len() - self.history_len
    }

    pub fn time_of(&self, index: usize) -> f64 {
        (index as f64 - (self.history_len as f64 - 1.0)) * self.h
    }
}

/// The `r + 1` most recent samples `y_i, y_{i−1}, …, y_{i−r}` kept in a ring.
#[derive(Debug, Clone)]
pub struct DelayedState {
    dim: usize,
    buf: Vec<f64>,
    head: usize,
    steps: usize,
    time: f64,
    scratch: Vec<f64>,
}

impl DelayedState {
    pub fn from_history(map: &SemiDiscMap, initial: &InitialHistory) -> Result<Self> {
        if initial.r() != map.r() || (initial.h() - map.h()).abs() > 1e-12 * map.h() {
            return Err(Error::InvalidInput(format!(
                "history sampled with r = {}, h = {} but map uses r = {}, h = {}",
                initial.r(),
                initial.h(),
                map.r(),
                map.h()
            )));
        }
        let n = map.dim();
        let mut buf = Vec::with_capacity((map.r() + 1) * n);
        for s in initial.samples() {
            if s.len() != n {
                return Err(Error::Dimension(format!(
                    "history sample has length {}, expected {n}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(
                    "history contains non-finite values".into(),
                ));
            }
            buf.extend_from_slice(s);
        }
        Ok(DelayedState {
            dim: n,
            buf,
            head: map.r(),
            steps: 0,
            time: 0.0,
            scratch: vec![0.0; 2 * n],
        })
    }

    pub fn head(&self) -> &[f64] {
        &self.buf[self.head * self.dim..(self.head + 1) * self.dim]
    }

    /// Sample `lag` steps back from the head (`0` is the head itself).
    pub fn lagged(&self, lag: usize) -> &[f64] {
        let len = self.buf.len() / self.dim;
        assert!(lag < len, "lag {lag} beyond stored history");
        let slot = (self.head + len - lag) % len;
        &self.buf[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Euclidean norm of the whole stacked buffer.
    pub fn buffer_norm(&self) -> f64 {
        self.buf.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initfn::{build_initial_history, InitialKind};
    use crate::systems::{
        duffing, pendulum_nltva, turning_1dof, turning_2dof, DuffingParams, Nonlinearity,
    };
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn delayed_decay(tau: f64) -> Arc<DdeSystem> {
        let g: Nonlinearity = Arc::new(|_, _, out| out[0] = 0.0);
        Arc::new(DdeSystem::new("decay", dmatrix![0.0], dmatrix![-1.0], tau, vec![0.0], g).unwrap())
    }

    fn constant_history(map: &SemiDiscMap, value: Vec<f64>) -> InitialHistory {
        build_initial_history(InitialKind::Constant, &value, map).unwrap()
    }

    #[test]
    fn scalar_map_matrices() {
        let map = SemiDiscMap::new(delayed_decay(1.0), 9).unwrap();
        let h = 1.0 / 9.5;
        assert_relative_eq!(map.h(), h, max_relative = 1e-15);
        assert_relative_eq!(map.p()[(0, 0)], 1.0);
        assert_relative_eq!(map.q()[(0, 0)], h, max_relative = 1e-14);
        assert_relative_eq!(map.qb()[(0, 0)], -h, max_relative = 1e-14);
        assert!(SemiDiscMap::new(delayed_decay(1.0), 0).is_err());
    }

    #[test]
    fn average_delay_matches_tau() {
        for r in [1, 7, 30, 100] {
            let map = SemiDiscMap::new(delayed_decay(0.37), r).unwrap();
            assert!(((r as f64 + 0.5) * map.h() - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn duffing_p_matches_closed_form() {
        // A = [[0,1],[−3,−0.2]] for a = 1, ζ = 0.1; eigenvalues −0.1 ± iω_d
        let sys = Arc::new(
            duffing(DuffingParams {
                a: 1.0,
                zeta: 0.1,
                tau: 0.1,
            })
            .unwrap(),
        );
        let map = SemiDiscMap::new(sys, 30).unwrap();
        let h = 0.1 / 30.5;
        let (sigma, k) = (0.1f64, 3.0f64);
        let wd = (k - sigma * sigma).sqrt();
        let e = (-sigma * h).exp();
        let (c, s) = ((wd * h).cos(), (wd * h).sin());
        let expected = dmatrix![
            e * (c + sigma / wd * s), e * s / wd;
            -e * k / wd * s, e * (c - sigma / wd * s)
        ];
        assert!((map.p() - expected).amax() < 1e-14);
    }

    #[test]
    fn one_step_of_scalar_decay() {
        let map = SemiDiscMap::new(delayed_decay(1.0), 9).unwrap();
        let init = constant_history(&map, vec![1.0]);
        let mut st = DelayedState::from_history(&map, &init).unwrap();
        assert!(map.step(&mut st));
        assert_relative_eq!(st.head()[0], 1.0 - map.h(), max_relative = 1e-14);
        assert_relative_eq!(st.time(), map.h());
        assert_eq!(st.lagged(1), &[1.0]);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let systems = [
            Arc::new(duffing(DuffingParams::default()).unwrap()),
            Arc::new(turning_1dof(Default::default()).unwrap()),
            Arc::new(turning_2dof(Default::default()).unwrap()),
            Arc::new(pendulum_nltva(Default::default()).unwrap()),
        ];
        for sys in systems {
            let eq = sys.equilibrium().to_vec();
            let map = SemiDiscMap::new(sys, 30).unwrap();
            let init = constant_history(&map, eq.clone());
            let mut st = DelayedState::from_history(&map, &init).unwrap();
            for _ in 0..200 {
                map.step(&mut st);
            }
            let err = st
                .head()
                .iter()
                .zip(&eq)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-14, "{}: {err}", map.system().name());
        }
    }

    #[test]
    fn simulate_stops_on_request() {
        let map = SemiDiscMap::new(delayed_decay(1.0), 9).unwrap();
        let init = constant_history(&map, vec![1.0]);
        let traj = map.simulate(&init, |_, _| Control::Stop).unwrap();
        assert_eq!(traj.last(), &[1.0]);
        assert_eq!(traj.steps(), 0);

        let mut count = 0;
        let traj = map
            .simulate(&init, |t, _| {
                if t > 0.0 {
                    count += 1;
                }
                if count == 100 {
                    Control::Stop
                } else {
                    Control::Continue
                }
            })
            .unwrap();
        assert_eq!(traj.len(), 10 + 100);
        assert_relative_eq!(
            traj.time_of(traj.len() - 1),
            100.0 * map.h(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn simulate_rejects_mismatched_history() {
        let map9 = SemiDiscMap::new(delayed_decay(1.0), 9).unwrap();
        let map10 = SemiDiscMap::new(delayed_decay(1.0), 10).unwrap();
        let init = constant_history(&map9, vec![1.0]);
        assert!(matches!(
            map10.simulate(&init, |_, _| Control::Stop),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn overflow_is_reported() {
        // ẏ = y blows up quickly with a huge step count
        let g: Nonlinearity = Arc::new(|_, _, out| out[0] = 0.0);
        let sys = Arc::new(
            DdeSystem::new("grow", dmatrix![5.0], dmatrix![0.0], 1.0, vec![0.0], g).unwrap(),
        );
        let map = SemiDiscMap::new(sys, 4).unwrap();
        let init = constant_history(&map, vec![1.0]);
        let summary = map.run(&init, |_, _| Control::Continue).unwrap();
        assert_eq!(summary.end, RunEnd::NonFinite);
    }
}
