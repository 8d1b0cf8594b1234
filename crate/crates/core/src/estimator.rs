//! Iterative LIM search.
//!
//! Headpoints are drawn, simulated and classified one after another. Every
//! headpoint whose trajectory does not settle at the desired equilibrium caps
//! the estimate at its own distance, so the estimate only ever shrinks.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    AttractorRegistry, CellGrid, Classification, ClassifierParams, RecordId, TrajectoryClassifier,
};
use crate::error::{Error, Result};
use crate::initfn::{build_initial_history, InitialKind};
use crate::metric::MetricSpace;
use crate::semidisc::{Control, RunEnd, SemiDiscMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub n_iter: usize,
    pub bisection_steps: u32,
    /// Random radii are drawn as `R·u^{1/(boundary_bias·dim)}`.
    pub boundary_bias: f64,
    pub seed: u64,
    /// Independent RNG stream, used to separate sweep points.
    pub stream: u64,
    pub classifier: ClassifierParams,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            n_iter: 50,
            bisection_steps: 5,
            boundary_bias: 2.0,
            seed: 0,
            stream: 0,
            classifier: ClassifierParams::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter < 1 {
            return Err(Error::Config("n_iter must be at least 1".into()));
        }
        if !(self.boundary_bias >= 1.0) {
            return Err(Error::Config(format!(
                "boundary_bias must be ≥ 1, got {}",
                self.boundary_bias
            )));
        }
        self.classifier.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lim {
    Unbounded,
    Finite(f64),
}

impl Lim {
    /// The estimate, capped by `cap`.
    pub fn capped(self, cap: f64) -> f64 {
        match self {
            Lim::Unbounded => cap,
            Lim::Finite(v) => v.min(cap),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IchStrategy {
    RandomInSphere,
    /// Halving the segment between a converging point `inner` (initially the
    /// equilibrium) and a divergent headpoint `target`.
    Bisection {
        target: Vec<f64>,
        inner: Vec<f64>,
        steps_remaining: u32,
    },
    ClosestPoint {
        source: RecordId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyTag {
    Random,
    Bisection,
    ClosestPoint,
}

impl fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyTag::Random => "random",
            StrategyTag::Bisection => "bisection",
            StrategyTag::ClosestPoint => "closest_point",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimStatus {
    Ok,
    /// No headpoint diverged; the estimate is the grid-inscribed radius.
    Boundary,
    /// The equilibrium is linearly unstable; the estimate is 0.
    Unstable,
}

impl fmt::Display for LimStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LimStatus::Ok => "ok",
            LimStatus::Boundary => "boundary",
            LimStatus::Unstable => "unstable",
        })
    }
}

/// Search state: estimate, schedule position, RNG and every record so far.
#[derive(Debug, Clone)]
pub struct LimState {
    pub lim: Lim,
    pub iteration: usize,
    pub history: Vec<f64>,
    pub strategy: IchStrategy,
    pub registry: AttractorRegistry,
    metric: MetricSpace,
    rng: ChaCha8Rng,
    inscribed: f64,
    cell_diagonal: f64,
    bisection_steps: u32,
    bias: f64,
    last_divergent: Option<RecordId>,
    pending: Option<Pending>,
}

#[derive(Debug, Clone, PartialEq)]
struct Pending {
    tag: StrategyTag,
    ich: Vec<f64>,
}

impl LimState {
    pub fn new(
        registry: AttractorRegistry,
        metric: MetricSpace,
        config: &EstimatorConfig,
    ) -> Result<Self> {
        config.validate()?;
        let grid = registry.grid();
        if metric.dim() != grid.dim() {
            return Err(Error::Dimension(format!(
                "metric dimension {} differs from grid dimension {}",
                metric.dim(),
                grid.dim()
            )));
        }
        let inscribed = metric.inscribed_radius(grid.lower(), grid.upper());
        let cell_diagonal = metric.box_diagonal(&grid.cell_edges());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(config.stream);
        Ok(LimState {
            lim: Lim::Unbounded,
            iteration: 0,
            history: Vec::with_capacity(config.n_iter),
            strategy: IchStrategy::RandomInSphere,
            registry,
            metric,
            rng,
            inscribed,
            cell_diagonal,
            bisection_steps: config.bisection_steps,
            bias: config.boundary_bias,
            last_divergent: None,
            pending: None,
        })
    }

    pub fn metric(&self) -> &MetricSpace {
        &self.metric
    }

    /// Radius of the largest metric ball around the equilibrium inside the
    /// grid.
    pub fn inscribed_radius(&self) -> f64 {
        self.inscribed
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.cell_diagonal
    }

    /// Current sampling radius.
    pub fn radius(&self) -> f64 {
        self.lim.capped(self.inscribed)
    }

    /// Point at whitened radius `rho` in a uniformly random direction.
    fn random_point(&mut self, rho: f64) -> Vec<f64> {
        let dim = self.metric.dim();
        let mut z: Vec<f64> = loop {
            let z: Vec<f64> = (0..dim).map(|_| self.rng.sample(StandardNormal)).collect();
            let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-12 {
                break z.into_iter().map(|v| v / n).collect();
            }
        };
        z.iter_mut().for_each(|v| *v *= rho);
        self.metric.from_whitened(&z)
    }

    fn draw_random(&mut self) -> Vec<f64> {
        let dim = self.metric.dim() as f64;
        let u: f64 = self.rng.random();
        let rho = match self.lim {
            Lim::Unbounded => self.inscribed * u.powf(1.0 / dim),
            Lim::Finite(_) => self.radius() * u.powf(1.0 / (self.bias * dim)),
        };
        self.random_point(rho)
    }

    /// Closest stored state to the equilibrium along a record, following the
    /// records it merged into.
    fn closest_sample(&self, source: RecordId) -> Option<(Vec<f64>, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        let mut cursor = Some((source, 0usize));
        while let Some((id, from)) = cursor {
            let rec = self.registry.record(id)?;
            for pos in from..rec.stored_len() {
                let d = self.metric.radius(rec.state_at(pos));
                if best.is_none_or(|(_, _, b)| d < b) {
                    best = Some((id.0 as usize, pos, d));
                }
            }
            cursor = rec
                .matched_at
                .filter(|(next, _)| *next < id)
                .map(|(next, pos)| (next, pos as usize + 1));
        }
        best.map(|(id, pos, d)| {
            let rec = &self.registry.records()[id];
            (rec.state_at(pos).to_vec(), d)
        })
    }

    /// Chooses the next headpoint and remembers which strategy produced it.
    pub fn next_ich(&mut self) -> (Vec<f64>, StrategyTag) {
        let (ich, tag) = loop {
            match &self.strategy {
                IchStrategy::RandomInSphere => break (self.draw_random(), StrategyTag::Random),
                IchStrategy::Bisection { target, inner, .. } => {
                    let mid = target
                        .iter()
                        .zip(inner)
                        .map(|(a, b)| 0.5 * (a + b))
                        .collect();
                    break (mid, StrategyTag::Bisection);
                }
                IchStrategy::ClosestPoint { source } => {
                    let limit = self.radius() - self.cell_diagonal;
                    match self.closest_sample(*source) {
                        Some((point, d)) if d < limit => break (point, StrategyTag::ClosestPoint),
                        _ => self.strategy = IchStrategy::RandomInSphere,
                    }
                }
            }
        };
        self.pending = Some(Pending {
            tag,
            ich: ich.clone(),
        });
        (ich, tag)
    }

    /// Shrinks the estimate if a divergent headpoint lies inside it.
    pub fn update_lim(&mut self, classification: &Classification, ich_distance: f64) {
        if !classification.is_divergent() {
            return;
        }
        self.lim = match self.lim {
            Lim::Finite(v) if v <= ich_distance => Lim::Finite(v),
            _ => Lim::Finite(ich_distance),
        };
    }

    /// Feeds back the outcome of the headpoint last returned by
    /// [`next_ich`](Self::next_ich).
    pub fn record_outcome(
        &mut self,
        id: RecordId,
        classification: &Classification,
        ich_distance: f64,
    ) {
        self.update_lim(classification, ich_distance);
        let divergent = classification.is_divergent();
        if divergent {
            self.last_divergent = Some(id);
        }
        let pending = self.pending.take();
        let restart = |ich: Vec<f64>, steps: u32, origin: &[f64], id: RecordId| {
            if steps == 0 {
                IchStrategy::ClosestPoint { source: id }
            } else {
                IchStrategy::Bisection {
                    target: ich,
                    inner: origin.to_vec(),
                    steps_remaining: steps,
                }
            }
        };
        let origin = self.metric.origin().to_vec();
        let steps = self.bisection_steps;
        self.strategy = match (
            pending,
            std::mem::replace(&mut self.strategy, IchStrategy::RandomInSphere),
        ) {
            (
                Some(p),
                IchStrategy::Bisection {
                    target,
                    inner,
                    steps_remaining,
                },
            ) if p.tag == StrategyTag::Bisection => {
                let (target, inner) = if divergent {
                    (p.ich, inner)
                } else {
                    (target, p.ich)
                };
                if steps_remaining <= 1 {
                    IchStrategy::ClosestPoint {
                        source: self.last_divergent.unwrap_or(id),
                    }
                } else {
                    IchStrategy::Bisection {
                        target,
                        inner,
                        steps_remaining: steps_remaining - 1,
                    }
                }
            }
            (Some(p), _) if divergent => restart(p.ich, steps, &origin, id),
            _ => IchStrategy::RandomInSphere,
        };
        self.iteration += 1;
        self.history.push(self.radius());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub id: RecordId,
    pub strategy: StrategyTag,
    pub ich: Vec<f64>,
    pub distance: f64,
    pub classification: Classification,
    pub steps: usize,
    pub end_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimRunResult {
    pub lim: f64,
    pub status: LimStatus,
    pub lim_history: Vec<f64>,
    pub n_traj: usize,
    pub n_steps: u64,
    pub inscribed_radius: f64,
    pub cell_diagonal: f64,
    /// Centres of the cells found to hold undesired fixed points.
    pub attractors: Vec<Vec<f64>>,
    pub trajectories: Vec<TrajectorySummary>,
    #[serde(skip)]
    pub wall_s: f64,
}

/// Simulates one headpoint, classifies it and stores its record.
pub fn run_trajectory(
    map: &SemiDiscMap,
    registry: &mut AttractorRegistry,
    kind: InitialKind,
    ich: &[f64],
    ich_distance: f64,
) -> Result<(Classification, RecordId, usize, f64)> {
    let history = build_initial_history(kind, ich, map)?;
    let mut cls = TrajectoryClassifier::new(registry, map.system().tau(), map.h());
    let mut last_t = 0.0;
    let summary = map.run(&history, |t, y| {
        last_t = t;
        if cls.observe(t, y).is_some() {
            Control::Stop
        } else {
            Control::Continue
        }
    })?;
    if summary.end == RunEnd::NonFinite {
        cls.mark_numeric_divergence(last_t + map.h());
    }
    let end_time = cls.end_time();
    let id = registry.next_id();
    let record = cls.into_record(id, ich.to_vec(), ich_distance);
    let classification = record.classification;
    registry.register(record)?;
    Ok((classification, id, summary.steps, end_time))
}

/// Runs the full search. The equilibrium must lie inside `grid`.
pub fn estimate_lim(
    map: &SemiDiscMap,
    metric: &MetricSpace,
    grid: &CellGrid,
    kind: InitialKind,
    config: &EstimatorConfig,
) -> Result<LimRunResult> {
    let start = Instant::now();
    let system = map.system();
    if metric.origin() != system.equilibrium() {
        return Err(Error::Config(
            "metric must be centred on the system equilibrium".into(),
        ));
    }
    let registry = AttractorRegistry::new(
        grid.clone(),
        config.classifier.clone(),
        system.equilibrium(),
    )?;
    let mut state = LimState::new(registry, metric.clone(), config)?;

    if map.linear_spectral_radius() > 1.0 + 1e-10 {
        return Ok(LimRunResult {
            lim: 0.0,
            status: LimStatus::Unstable,
            lim_history: vec![0.0],
            n_traj: 0,
            n_steps: 0,
            inscribed_radius: state.inscribed,
            cell_diagonal: state.cell_diagonal,
            attractors: Vec::new(),
            trajectories: Vec::new(),
            wall_s: start.elapsed().as_secs_f64(),
        });
    }

    let mut trajectories = Vec::with_capacity(config.n_iter);
    let mut n_steps = 0u64;
    for _ in 0..config.n_iter {
        let (ich, tag) = state.next_ich();
        let distance = metric.radius(&ich);
        let (classification, id, steps, end_time) =
            run_trajectory(map, &mut state.registry, kind, &ich, distance)?;
        n_steps += steps as u64;
        state.record_outcome(id, &classification, distance);
        trajectories.push(TrajectorySummary {
            id,
            strategy: tag,
            ich,
            distance,
            classification,
            steps,
            end_time,
        });
    }

    let status = match state.lim {
        Lim::Unbounded => LimStatus::Boundary,
        Lim::Finite(_) => LimStatus::Ok,
    };
    let grid = state.registry.grid();
    let attractors = state
        .registry
        .fixed_points()
        .keys()
        .map(|&c| grid.center(c))
        .collect();
    Ok(LimRunResult {
        lim: state.radius(),
        status,
        lim_history: state.history,
        n_traj: trajectories.len(),
        n_steps,
        inscribed_radius: state.inscribed,
        cell_diagonal: state.cell_diagonal,
        attractors,
        trajectories,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Outcome;
    use crate::systems::{duffing, turning_1dof, DuffingParams, Turning1Params};
    use std::sync::Arc;

    fn duffing_setup(n_disc: u32) -> (SemiDiscMap, MetricSpace, CellGrid) {
        let sys = Arc::new(duffing(DuffingParams::default()).unwrap());
        let map = SemiDiscMap::new(sys.clone(), 30).unwrap();
        let metric = MetricSpace::for_system(&sys, None).unwrap();
        let grid = CellGrid::new(vec![-5.0, -5.0], vec![5.0, 5.0], n_disc).unwrap();
        (map, metric, grid)
    }

    fn fresh_state(seed: u64) -> LimState {
        let (_, metric, grid) = duffing_setup(501);
        let reg =
            AttractorRegistry::new(grid, ClassifierParams::default(), metric.origin()).unwrap();
        LimState::new(
            reg,
            metric,
            &EstimatorConfig {
                seed,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn divergent() -> Classification {
        Classification::direct(Outcome::DivergedOutOfBounds)
    }

    fn converged() -> Classification {
        Classification::direct(Outcome::ConvergedDesired)
    }

    #[test]
    fn update_lim_examples() {
        let mut s = fresh_state(1);
        s.update_lim(&divergent(), 3.7);
        assert_eq!(s.lim, Lim::Finite(3.7));
        s.lim = Lim::Finite(2.0);
        s.update_lim(&divergent(), 1.2);
        assert_eq!(s.lim, Lim::Finite(1.2));
        s.update_lim(&converged(), 0.8);
        assert_eq!(s.lim, Lim::Finite(1.2));
        s.update_lim(&divergent(), 1.5);
        assert_eq!(s.lim, Lim::Finite(1.2));
        s.update_lim(&Classification::direct(Outcome::TimedOut), 1.0);
        assert_eq!(s.lim, Lim::Finite(1.0));
    }

    #[test]
    fn initial_draws_fill_the_inscribed_ball() {
        let mut s = fresh_state(7);
        let r0 = s.inscribed_radius();
        let grid = s.registry.grid().clone();
        let mut radii = Vec::new();
        for _ in 0..2000 {
            let (p, tag) = s.next_ich();
            assert_eq!(tag, StrategyTag::Random);
            let d = s.metric().radius(&p);
            assert!(d < r0);
            assert!(grid.contains(&p));
            radii.push(d / r0);
        }
        // uniform in a disc: P(ρ < 1/√2) = 1/2
        let inner =
            radii.iter().filter(|&&x| x < 0.5f64.sqrt()).count() as f64 / radii.len() as f64;
        assert!((inner - 0.5).abs() < 0.05, "inner fraction {inner}");
    }

    #[test]
    fn bisection_halves_towards_equilibrium() {
        let mut s = fresh_state(3);
        let eq = s.metric().origin().to_vec();
        let (p, _) = s.next_ich();
        let d = s.metric().radius(&p);
        s.record_outcome(RecordId(0), &divergent(), d);
        let (mid, tag) = s.next_ich();
        assert_eq!(tag, StrategyTag::Bisection);
        assert!((s.metric().radius(&mid) - 0.5 * d).abs() < 1e-12);
        for k in 0..2 {
            assert!((mid[k] - 0.5 * (p[k] + eq[k])).abs() < 1e-12);
        }
        // converging midpoint moves the inner end outwards
        s.record_outcome(RecordId(1), &converged(), 0.5 * d);
        let (next, _) = s.next_ich();
        assert!((s.metric().radius(&next) - 0.75 * d).abs() < 1e-12);
        assert_eq!(s.lim, Lim::Finite(d));
    }

    #[test]
    fn boundary_biased_draws_stay_inside_current_sphere() {
        let mut s = fresh_state(11);
        s.lim = Lim::Finite(0.8);
        let mut above_half = 0;
        for _ in 0..1000 {
            let p = s.draw_random();
            let d = s.metric().radius(&p);
            assert!(d < 0.8);
            if d > 0.4 {
                above_half += 1;
            }
        }
        // P(ρ > R/2) = 1 − 2^{-4} under the biased law in 2D
        assert!((above_half as f64 / 1000.0 - 0.9375).abs() < 0.03);
    }

    #[test]
    fn history_is_non_increasing_and_reproducible() {
        let (map, metric, grid) = duffing_setup(201);
        let config = EstimatorConfig {
            n_iter: 15,
            seed: 5,
            ..Default::default()
        };
        let a = estimate_lim(&map, &metric, &grid, InitialKind::FreeVibration, &config).unwrap();
        let b = estimate_lim(&map, &metric, &grid, InitialKind::FreeVibration, &config).unwrap();
        assert_eq!(a.lim_history.len(), 15);
        assert!(a.lim_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(a.lim, *a.lim_history.last().unwrap());
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.status, LimStatus::Ok);
        assert!(a.lim > 0.0 && a.lim < a.inscribed_radius);
    }

    #[test]
    fn closest_point_follows_last_divergent_trajectory() {
        let (map, metric, grid) = duffing_setup(201);
        let reg =
            AttractorRegistry::new(grid, ClassifierParams::default(), metric.origin()).unwrap();
        let mut s = LimState::new(reg, metric.clone(), &EstimatorConfig::default()).unwrap();
        // a headpoint beyond the saddle, heading to the other well
        let ich = vec![0.8, 0.0];
        let d = metric.radius(&ich);
        let (c, id, _, _) =
            run_trajectory(&map, &mut s.registry, InitialKind::FreeVibration, &ich, d).unwrap();
        assert!(c.is_divergent());
        s.update_lim(&c, d);
        let (point, dist) = s.closest_sample(id).unwrap();
        let rec = s.registry.record(id).unwrap();
        let brute = (0..rec.stored_len())
            .map(|k| metric.radius(rec.state_at(k)))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(dist, brute);
        assert_eq!(metric.radius(&point), dist);
        assert!(dist <= d);
    }

    #[test]
    fn unstable_equilibrium_is_flagged() {
        // chip width far above the stability lobes
        let sys = Arc::new(
            turning_1dof(Turning1Params {
                p: 1.0,
                ..Default::default()
            })
            .unwrap(),
        );
        let map = SemiDiscMap::new(sys.clone(), 20).unwrap();
        assert!(map.linear_spectral_radius() > 1.0);
        let metric = MetricSpace::for_system(&sys, None).unwrap();
        let grid = CellGrid::new(vec![-5.0, -5.0], vec![5.0, 5.0], 101).unwrap();
        let r = estimate_lim(
            &map,
            &metric,
            &grid,
            InitialKind::FreeVibration,
            &EstimatorConfig::default(),
        )
        .unwrap();
        assert_eq!(r.status, LimStatus::Unstable);
        assert_eq!(r.lim, 0.0);
        assert_eq!(r.lim_history, vec![0.0]);
    }

    #[test]
    fn equilibrium_outside_grid_is_a_config_error() {
        let (map, metric, _) = duffing_setup(101);
        let grid = CellGrid::new(vec![0.0, -5.0], vec![5.0, 5.0], 101).unwrap();
        let err = estimate_lim(
            &map,
            &metric,
            &grid,
            InitialKind::FreeVibration,
            &EstimatorConfig::default(),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
