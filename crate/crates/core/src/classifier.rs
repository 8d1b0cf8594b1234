//! Cell-grid bookkeeping and online trajectory classification.
//!
//! Every sample of a trajectory is located on a uniform grid over the region
//! of interest. Rules are checked per sample in a fixed priority:
//!
//! 1. leaving the grid → diverged;
//! 2. dwelling longer than `τ·dwell_factor` near the desired equilibrium →
//!    converged;
//! 3. dwelling longer than `t̄` in any other single cell → a (possibly
//!    already known) undesired fixed point;
//! 4. the latest `τ`-long window of stored cells occurring `k_rep` times
//!    earlier in the same trajectory → periodic;
//! 5. `m_match` stored cells coinciding with a stretch of an earlier record →
//!    inherits that record's outcome;
//! 6. `t ≥ t_max` → timed out.
//!
//! Rules 4 and 5 work on a sub-sampled copy of the trajectory holding
//! `N_τ` samples per delay, which is also what records keep.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flattened multi-index of a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellCode(pub u128);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellIndex {
    Cell(CellCode),
    OutOfBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    n_disc: u32,
}

impl CellGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, n_disc: u32) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Dimension(format!(
                "bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
        {
            return Err(Error::Config(
                "grid bounds must be finite with lower < upper".into(),
            ));
        }
        if n_disc < 1 {
            return Err(Error::Config("n_disc must be at least 1".into()));
        }
        let cells = (n_disc as f64).powi(lower.len() as i32);
        if cells >= 2f64.powi(127) {
            return Err(Error::Config(format!(
                "{n_disc}^{} cells cannot be indexed",
                lower.len()
            )));
        }
        Ok(CellGrid {
            lower,
            upper,
            n_disc,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn n_disc(&self) -> u32 {
        self.n_disc
    }

    pub fn cell_edges(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) / self.n_disc as f64)
            .collect()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(p, (l, u))| *p >= *l && *p <= *u)
    }

    /// Writes per-dimension indices; `false` when the point is outside.
    pub fn indices_into(&self, point: &[f64], out: &mut [u32]) -> bool {
        let n = self.n_disc;
        for k in 0..self.dim() {
            let (l, u, p) = (self.lower[k], self.upper[k], point[k]);
            if !(p >= l && p <= u) {
                return false;
            }
            let raw = ((p - l) / (u - l) * n as f64).floor();
            out[k] = if raw >= n as f64 { n - 1 } else { raw as u32 };
        }
        true
    }

    pub fn encode(&self, indices: &[u32]) -> CellCode {
        let n = self.n_disc as u128;
        CellCode(
            indices
                .iter()
                .rev()
                .fold(0u128, |acc, &i| acc * n + i as u128),
        )
    }

    pub fn decode(&self, code: CellCode) -> Vec<u32> {
        let n = self.n_disc as u128;
        let mut rest = code.0;
        (0..self.dim())
            .map(|_| {
                let i = (rest % n) as u32;
                rest /= n;
                i
            })
            .collect()
    }

    pub fn cell_of(&self, point: &[f64]) -> CellIndex {
        let mut idx = vec![0; self.dim()];
        if point.len() == self.dim() && self.indices_into(point, &mut idx) {
            CellIndex::Cell(self.encode(&idx))
        } else {
            CellIndex::OutOfBounds
        }
    }

    pub fn center(&self, code: CellCode) -> Vec<f64> {
        let edges = self.cell_edges();
        self.decode(code)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.lower[k] + (i as f64 + 0.5) * edges[k])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierParams {
    /// Convergence dwell near the desired equilibrium, in units of `τ` (≥ 1).
    pub dwell_factor: f64,
    /// Dwell `t̄/τ` in one cell that flags an undesired fixed point (≥ 1).
    pub ghost_factor: f64,
    /// Chebyshev radius, in cells, of the neighbourhood counted as the
    /// desired equilibrium.
    pub neighborhood: u32,
    /// Earlier repetitions of the latest window needed to call a trajectory
    /// periodic.
    pub k_rep: u32,
    /// Consecutive stored samples that must coincide with an earlier record.
    pub m_match: u32,
    /// Stored samples per delay interval.
    pub n_tau: u32,
    pub t_max: f64,
    /// Allow stopping on a match with an earlier record.
    pub reuse: bool,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        ClassifierParams {
            dwell_factor: 1.0,
            ghost_factor: 2.0,
            neighborhood: 1,
            k_rep: 2,
            m_match: 10,
            n_tau: 10,
            t_max: 1000.0,
            reuse: true,
        }
    }
}

impl ClassifierParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dwell_factor >= 1.0) {
            return Err(Error::Config(format!(
                "dwell_factor must be ≥ 1, got {}",
                self.dwell_factor
            )));
        }
        if !(self.ghost_factor >= 1.0) {
            return Err(Error::Config(format!(
                "ghost_factor must be ≥ 1, got {}",
                self.ghost_factor
            )));
        }
        if self.k_rep < 1 || self.m_match < 2 || self.n_tau < 2 {
            return Err(Error::Config(
                "k_rep ≥ 1, m_match ≥ 2 and n_tau ≥ 2 are required".into(),
            ));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::Config(format!(
                "t_max must be positive, got {}",
                self.t_max
            )));
        }
        Ok(())
    }

    /// Integration steps between stored samples, so that `n_tau` stored
    /// samples cover at least one delay.
    pub fn stride(&self, tau: f64, h: f64) -> usize {
        ((tau / (self.n_tau as f64 * h)) - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub u32);

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// What a trajectory did, as far as the desired equilibrium is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    ConvergedDesired,
    DivergedOutOfBounds,
    NewFixedPoint { cell: CellCode },
    Periodic,
    TimedOut,
    DivergedNumeric,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::ConvergedDesired => "converged",
            Outcome::DivergedOutOfBounds => "out_of_bounds",
            Outcome::NewFixedPoint { .. } => "fixed_point",
            Outcome::Periodic => "periodic",
            Outcome::TimedOut => "timed_out",
            Outcome::DivergedNumeric => "numeric",
        }
    }
}

/// An outcome, possibly inherited from an earlier record the trajectory ran
/// into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub matched: Option<RecordId>,
}

impl Classification {
    pub fn direct(outcome: Outcome) -> Self {
        Classification {
            outcome,
            matched: None,
        }
    }

    pub fn matched(id: RecordId, inherited: Outcome) -> Self {
        Classification {
            outcome: inherited,
            matched: Some(id),
        }
    }

    /// Everything except convergence to the desired equilibrium, timeouts
    /// included, counts against the basin.
    pub fn is_divergent(&self) -> bool {
        self.outcome != Outcome::ConvergedDesired
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRun {
    pub cell: CellCode,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub id: RecordId,
    /// Stored cells, run-length encoded.
    pub runs: Vec<CellRun>,
    run_starts: Vec<u32>,
    /// Stored states, flattened, one per stored cell.
    pub states: Vec<f64>,
    pub dim: usize,
    pub classification: Classification,
    pub ich: Vec<f64>,
    pub ich_distance: f64,
    /// Stored position at which this trajectory merged into an earlier
    /// record, if it did.
    pub matched_at: Option<(RecordId, u32)>,
}

impl TrajectoryRecord {
    pub fn stored_len(&self) -> usize {
        self.run_starts.last().map_or(0, |&s| s as usize)
    }

    pub fn cell_at(&self, pos: usize) -> CellCode {
        // run_starts holds exclusive run ends
        let k = self.run_starts.partition_point(|&end| end as usize <= pos);
        self.runs[k].cell
    }

    pub fn state_at(&self, pos: usize) -> &[f64] {
        &self.states[pos * self.dim..(pos + 1) * self.dim]
    }

    fn expanded_cells(&self) -> Vec<CellCode> {
        self.runs
            .iter()
            .flat_map(|r| std::iter::repeat_n(r.cell, r.count as usize))
            .collect()
    }
}

fn compress(cells: &[CellCode]) -> (Vec<CellRun>, Vec<u32>) {
    let mut runs: Vec<CellRun> = Vec::new();
    for &c in cells {
        match runs.last_mut() {
            Some(r) if r.cell == c => r.count += 1,
            _ => runs.push(CellRun { cell: c, count: 1 }),
        }
    }
    let mut total = 0;
    let ends = runs
        .iter()
        .map(|r| {
            total += r.count;
            total
        })
        .collect();
    (runs, ends)
}

fn window_hash(cells: &[CellCode]) -> Option<u64> {
    // single-cell windows are dwells, handled by rules 2 and 3
    if cells.iter().all(|c| *c == cells[0]) {
        return None;
    }
    let mut h = DefaultHasher::new();
    cells.hash(&mut h);
    Some(h.finish())
}

/// Known attractors and every classified trajectory of one estimation run.
#[derive(Debug, Clone)]
pub struct AttractorRegistry {
    grid: CellGrid,
    params: ClassifierParams,
    desired: Vec<u32>,
    fixed_points: BTreeMap<CellCode, RecordId>,
    records: Vec<TrajectoryRecord>,
    windows: HashMap<u64, Vec<(u32, u32)>>,
}

impl AttractorRegistry {
    pub fn new(
        grid: CellGrid,
        params: ClassifierParams,
        desired_equilibrium: &[f64],
    ) -> Result<Self> {
        params.validate()?;
        if desired_equilibrium.len() != grid.dim() {
            return Err(Error::Dimension(format!(
                "equilibrium has length {}, grid dimension is {}",
                desired_equilibrium.len(),
                grid.dim()
            )));
        }
        let mut desired = vec![0; grid.dim()];
        if !grid.indices_into(desired_equilibrium, &mut desired) {
            return Err(Error::Config(
                "desired equilibrium lies outside the grid bounds".into(),
            ));
        }
        Ok(AttractorRegistry {
            grid,
            params,
            desired,
            fixed_points: BTreeMap::new(),
            records: Vec::new(),
            windows: HashMap::new(),
        })
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn params(&self) -> &ClassifierParams {
        &self.params
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn record(&self, id: RecordId) -> Option<&TrajectoryRecord> {
        self.records.get(id.0 as usize).filter(|r| r.id == id)
    }

    pub fn next_id(&self) -> RecordId {
        RecordId(self.records.len() as u32)
    }

    pub fn desired_cell(&self) -> CellCode {
        self.grid.encode(&self.desired)
    }

    /// Whether the cell with these indices counts as the desired equilibrium.
    pub fn is_desired(&self, indices: &[u32]) -> bool {
        let r = self.params.neighborhood;
        indices
            .iter()
            .zip(&self.desired)
            .all(|(&i, &d)| i.abs_diff(d) <= r)
    }

    /// Discovered undesired fixed points and the record that found each.
    pub fn fixed_points(&self) -> &BTreeMap<CellCode, RecordId> {
        &self.fixed_points
    }

    pub fn register(&mut self, record: TrajectoryRecord) -> Result<()> {
        if record.id != self.next_id() {
            return Err(Error::InvalidInput(format!(
                "record id {} out of sequence (expected {})",
                record.id,
                self.next_id()
            )));
        }
        if let Outcome::NewFixedPoint { cell } = record.classification.outcome {
            self.fixed_points.entry(cell).or_insert(record.id);
        }
        let m = self.params.m_match as usize;
        let cells = record.expanded_cells();
        let slot = self.records.len() as u32;
        for end in (m.saturating_sub(1))..cells.len() {
            if let Some(h) = window_hash(&cells[end + 1 - m..=end]) {
                self.windows.entry(h).or_default().push((slot, end as u32));
            }
        }
        self.records.push(record);
        Ok(())
    }

    fn find_match(&self, window: &[CellCode]) -> Option<(RecordId, u32)> {
        let h = window_hash(window)?;
        let m = window.len();
        self.windows.get(&h)?.iter().find_map(|&(slot, end)| {
            let rec = &self.records[slot as usize];
            let start = end as usize + 1 - m;
            (0..m)
                .all(|k| rec.cell_at(start + k) == window[k])
                .then_some((rec.id, end))
        })
    }
}

/// Online classifier for a single trajectory.
#[derive(Debug)]
pub struct TrajectoryClassifier<'a> {
    registry: &'a AttractorRegistry,
    dim: usize,
    converge_dwell: f64,
    ghost_dwell: f64,
    t_max: f64,
    stride: usize,
    idx: Vec<u32>,
    samples: usize,
    cell: Option<CellCode>,
    cell_entry: f64,
    desired_entry: Option<f64>,
    stored_cells: Vec<CellCode>,
    stored_states: Vec<f64>,
    own_windows: HashMap<u64, Vec<u32>>,
    result: Option<Classification>,
    matched_at: Option<(RecordId, u32)>,
    end_time: f64,
}

impl<'a> TrajectoryClassifier<'a> {
    /// `h` is the sampling step of the stream, `tau` the system delay.
    pub fn new(registry: &'a AttractorRegistry, tau: f64, h: f64) -> Self {
        let p = &registry.params;
        let dim = registry.grid.dim();
        TrajectoryClassifier {
            registry,
            dim,
            converge_dwell: p.dwell_factor * tau,
            ghost_dwell: p.ghost_factor * tau,
            t_max: p.t_max,
            stride: p.stride(tau, h),
            idx: vec![0; dim],
            samples: 0,
            cell: None,
            cell_entry: 0.0,
            desired_entry: None,
            stored_cells: Vec::new(),
            stored_states: Vec::new(),
            own_windows: HashMap::new(),
            result: None,
            matched_at: None,
            end_time: 0.0,
        }
    }

    pub fn classification(&self) -> Option<Classification> {
        self.result
    }

    pub fn stored_len(&self) -> usize {
        self.stored_cells.len()
    }

    pub fn stored_states(&self) -> &[f64] {
        &self.stored_states
    }

    pub fn end_time(&self) -> f64 {
        self.end_time
    }

    /// Feeds the next sample; returns the classification once a rule fires.
    /// Samples after that are ignored.
    pub fn observe(&mut self, t: f64, y: &[f64]) -> Option<Classification> {
        if self.result.is_some() {
            return self.result;
        }
        self.end_time = t;
        let sample = self.samples;
        self.samples += 1;
        let verdict = self.apply_rules(sample, t, y);
        if verdict.is_some() {
            self.result = verdict;
        }
        verdict
    }

    /// Classifies a trajectory that blew up numerically.
    pub fn mark_numeric_divergence(&mut self, t: f64) -> Classification {
        if self.result.is_none() {
            self.end_time = t;
            self.result = Some(Classification::direct(Outcome::DivergedNumeric));
        }
        self.result.unwrap()
    }

    fn apply_rules(&mut self, sample: usize, t: f64, y: &[f64]) -> Option<Classification> {
        let registry = self.registry;
        let grid = &registry.grid;

        // 1. left the region of interest
        if !y.iter().all(|v| v.is_finite()) {
            return Some(Classification::direct(Outcome::DivergedNumeric));
        }
        if !grid.indices_into(y, &mut self.idx) {
            return Some(Classification::direct(Outcome::DivergedOutOfBounds));
        }
        let code = grid.encode(&self.idx);
        if self.cell != Some(code) {
            self.cell = Some(code);
            self.cell_entry = t;
        }

        // 2. settled near the desired equilibrium
        let desired = registry.is_desired(&self.idx);
        if desired {
            let entry = *self.desired_entry.get_or_insert(t);
            if t - entry > self.converge_dwell {
                return Some(Classification::direct(Outcome::ConvergedDesired));
            }
        } else {
            self.desired_entry = None;
            // 3. settled in some other cell
            if t - self.cell_entry > self.ghost_dwell {
                return Some(match registry.fixed_points.get(&code) {
                    Some(&id) => Classification::matched(id, Outcome::NewFixedPoint { cell: code }),
                    None => Classification::direct(Outcome::NewFixedPoint { cell: code }),
                });
            }
        }

        if sample.is_multiple_of(self.stride) {
            self.stored_cells.push(code);
            self.stored_states.extend_from_slice(y);
            if let Some(c) = self.check_windows() {
                return Some(c);
            }
        }

        // 6. out of time
        if t >= self.t_max {
            return Some(Classification::direct(Outcome::TimedOut));
        }
        None
    }

    fn check_windows(&mut self) -> Option<Classification> {
        let params = &self.registry.params;
        let end = self.stored_cells.len() - 1;

        // 4. the latest τ-window already occurred k_rep times
        let n = params.n_tau as usize;
        if end + 1 >= n {
            let window = &self.stored_cells[end + 1 - n..];
            if let Some(h) = window_hash(window) {
                let earlier = self.own_windows.entry(h).or_default();
                let repeats = earlier
                    .iter()
                    .filter(|&&e| {
                        let s = e as usize + 1 - n;
                        self.stored_cells[s..=e as usize] == *window
                    })
                    .count();
                earlier.push(end as u32);
                if repeats >= params.k_rep as usize {
                    return Some(Classification::direct(Outcome::Periodic));
                }
            }
        }

        // 5. ran into an earlier trajectory
        let m = params.m_match as usize;
        if params.reuse && end + 1 >= m {
            let window = &self.stored_cells[end + 1 - m..];
            if let Some((id, pos)) = self.registry.find_match(window) {
                let rec = self.registry.record(id).expect("indexed record exists");
                self.matched_at = Some((id, pos));
                return Some(Classification::matched(id, rec.classification.outcome));
            }
        }
        None
    }

    /// Closes the trajectory as timed out if no rule fired, and builds its
    /// record.
    pub fn into_record(
        mut self,
        id: RecordId,
        ich: Vec<f64>,
        ich_distance: f64,
    ) -> TrajectoryRecord {
        let classification = *self
            .result
            .get_or_insert(Classification::direct(Outcome::TimedOut));
        let (runs, run_starts) = compress(&self.stored_cells);
        TrajectoryRecord {
            id,
            runs,
            run_starts,
            states: self.stored_states,
            dim: self.dim,
            classification,
            ich,
            ich_distance,
            matched_at: self.matched_at,
        }
    }
}

/// Classifies a finite stream of `(time, state)` samples at step `h`.
/// A stream that ends before any rule fires is treated as timed out.
pub fn classify_online<I>(
    registry: &AttractorRegistry,
    tau: f64,
    h: f64,
    stream: I,
) -> Result<Classification>
where
    I: IntoIterator<Item = (f64, Vec<f64>)>,
{
    let mut classifier = TrajectoryClassifier::new(registry, tau, h);
    let mut any = false;
    for (t, y) in stream {
        any = true;
        if let Some(c) = classifier.observe(t, &y) {
            return Ok(c);
        }
    }
    if !any {
        return Err(Error::InvalidInput("empty sample stream".into()));
    }
    Ok(Classification::direct(Outcome::TimedOut))
}
