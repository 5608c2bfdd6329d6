//! Two-state tabular Q-learning over an action bank.
//!
//! Each episode refines one image. The dispersion metric of the untouched
//! image is the fixed baseline `M`; every iteration samples one action
//! uniformly at random, measures `M₁` on the original image transformed by
//! that single action, and rewards the comparison:
//!
//! | outcome  | reward | next state |
//! |----------|--------|------------|
//! | `M₁ > M` | +1     | 1 (improved) |
//! | `M₁ = M` | 0      | 0          |
//! | `M₁ < M` | −1     | 0          |
//!
//! The table is updated with
//! `Q(s,a) ← Q(s,a) + α·[r + γ·max_b Q(s',b) − Q(s,a)]`
//! for `N = a·m` iterations, after which the action owning the largest entry
//! anywhere in the table is selected.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of rows in every Q-table.
pub const NUM_STATES: usize = 2;

/// Binary episode state: whether the last sampled action raised the metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum State {
    NotImproved = 0,
    Improved = 1,
}

impl State {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl From<State> for u8 {
    fn from(s: State) -> u8 {
        s as u8
    }
}

impl TryFrom<u8> for State {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(State::NotImproved),
            1 => Ok(State::Improved),
            _ => Err(format!("state must be 0 or 1, got {v}")),
        }
    }
}

/// Ternary reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Reward {
    Worse = -1,
    Same = 0,
    Better = 1,
}

impl Reward {
    pub fn value(self) -> f64 {
        self as i8 as f64
    }
}

impl From<Reward> for i8 {
    fn from(r: Reward) -> i8 {
        r as i8
    }
}

impl TryFrom<i8> for Reward {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            -1 => Ok(Reward::Worse),
            0 => Ok(Reward::Same),
            1 => Ok(Reward::Better),
            _ => Err(format!("reward must be -1, 0 or 1, got {v}")),
        }
    }
}

fn check_metric(m: f64) -> Result<f64> {
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::InvalidMetric(m))
    }
}

/// Reward for moving from metric `before` to `after`. Exact comparison, no
/// tolerance band.
pub fn compute_reward(before: f64, after: f64) -> Result<Reward> {
    let (before, after) = (check_metric(before)?, check_metric(after)?);
    Ok(if after > before {
        Reward::Better
    } else if after == before {
        Reward::Same
    } else {
        Reward::Worse
    })
}

/// State reached after observing `after` against `before`. Equal and lower
/// metrics both map to [`State::NotImproved`].
pub fn next_state(before: f64, after: f64) -> Result<State> {
    let (before, after) = (check_metric(before)?, check_metric(after)?);
    Ok(if after > before {
        State::Improved
    } else {
        State::NotImproved
    })
}

/// Hyperparameters of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RLConfig {
    /// Learning rate, in (0, 1].
    pub alpha: f64,
    /// Discount rate, in [0, 1).
    pub gamma: f64,
    /// Iterations per action; an episode runs `actions × m` iterations.
    pub m: usize,
    pub seed: u64,
}

impl Default for RLConfig {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            gamma: 0.3,
            m: 20,
            seed: 0,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be positive".into()));
        }
        Ok(())
    }

    /// Total iterations `N = actions × m`.
    pub fn iterations(&self, actions: usize) -> usize {
        actions * self.m
    }

    /// Largest magnitude any Q entry can reach with rewards in {−1, 0, +1}.
    pub fn q_bound(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// The 2×a action-value table; rows are states, columns are actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    rows: [Vec<f64>; NUM_STATES],
}

impl QTable {
    /// A zero-initialized table with `actions` columns.
    pub fn new(actions: usize) -> Result<Self> {
        if actions == 0 {
            return Err(Error::InvalidProblem(
                "Q-table needs at least one action".into(),
            ));
        }
        Ok(Self {
            rows: [vec![0.0; actions], vec![0.0; actions]],
        })
    }

    /// Builds a table from explicit rows (row 0, row 1).
    pub fn from_rows(row0: Vec<f64>, row1: Vec<f64>) -> Result<Self> {
        if row0.is_empty() || row0.len() != row1.len() {
            return Err(Error::Shape(format!(
                "Q-table rows must be non-empty and equal length, got {} and {}",
                row0.len(),
                row1.len()
            )));
        }
        Ok(Self { rows: [row0, row1] })
    }

    pub fn actions(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>; NUM_STATES] {
        &self.rows
    }

    pub fn get(&self, state: usize, action: usize) -> Result<f64> {
        self.check(state, action)?;
        Ok(self.rows[state][action])
    }

    fn check(&self, state: usize, action: usize) -> Result<()> {
        if state >= NUM_STATES {
            return Err(Error::OutOfBounds {
                what: "state",
                index: state,
                limit: NUM_STATES,
            });
        }
        if action >= self.actions() {
            return Err(Error::OutOfBounds {
                what: "action",
                index: action,
                limit: self.actions(),
            });
        }
        Ok(())
    }

    /// `max_b Q(state, b)`.
    pub fn row_max(&self, state: State) -> f64 {
        self.rows[state.index()]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// One Q-learning update of entry `(state, action)`; no other entry changes.
    pub fn update(
        &mut self,
        state: State,
        action: usize,
        reward: Reward,
        next: State,
        cfg: &RLConfig,
    ) -> Result<()> {
        self.check(state.index(), action)?;
        let future = self.row_max(next);
        let q = &mut self.rows[state.index()][action];
        *q += cfg.alpha * (reward.value() + cfg.gamma * future - *q);
        Ok(())
    }

    /// Column of the largest entry across both rows; ties go to the lowest
    /// action index.
    pub fn select_optimal_action(&self) -> usize {
        let mut best = 0;
        let mut best_value = f64::NEG_INFINITY;
        for a in 0..self.actions() {
            let v = self.rows[0][a].max(self.rows[1][a]);
            if v > best_value {
                best = a;
                best_value = v;
            }
        }
        best
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

/// Pure form of [`QTable::update`].
pub fn q_update(
    table: &QTable,
    state: State,
    action: usize,
    reward: Reward,
    next: State,
    cfg: &RLConfig,
) -> Result<QTable> {
    let mut out = table.clone();
    out.update(state, action, reward, next, cfg)?;
    Ok(out)
}

pub fn select_optimal_action(table: &QTable) -> usize {
    table.select_optimal_action()
}

/// One iteration of an episode, recorded after its update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub action: usize,
    pub metric_before: f64,
    pub metric_after: f64,
    pub reward: Reward,
    pub state: State,
    pub next_state: State,
    pub q_snapshot: QTable,
}

/// Full audit record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub iterations: Vec<IterationRecord>,
    pub selected_action: usize,
}

impl EpisodeTrace {
    pub fn final_table(&self) -> Option<&QTable> {
        self.iterations.last().map(|r| &r.q_snapshot)
    }

    /// Writes one JSON object per iteration. When `sample` is given, each line
    /// also carries that sample index.
    pub fn write_jsonl<W: Write>(&self, mut out: W, sample: Option<usize>) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            #[serde(skip_serializing_if = "Option::is_none")]
            sample: Option<usize>,
            #[serde(flatten)]
            record: &'a IterationRecord,
            selected_action: usize,
        }
        for record in &self.iterations {
            let line = Line {
                sample,
                record,
                selected_action: self.selected_action,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Whether the metric function returns the same value every time it sees the
/// same action. Deterministic landscapes are evaluated once per action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricCaching {
    Cached,
    Uncached,
}

/// Runs one episode of `cfg.iterations(actions)` iterations.
///
/// `baseline` is the metric of the untransformed image and stays fixed for the
/// whole episode. `metric_fn(a)` must return the metric of the original image
/// transformed by action `a`. Any error from `metric_fn` aborts the episode.
pub fn run_episode<F>(
    actions: usize,
    baseline: f64,
    mut metric_fn: F,
    cfg: &RLConfig,
    caching: MetricCaching,
) -> Result<EpisodeTrace>
where
    F: FnMut(usize) -> Result<f64>,
{
    cfg.validate()?;
    check_metric(baseline)?;
    let mut table = QTable::new(actions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache: Vec<Option<f64>> = vec![None; actions];
    let total = cfg.iterations(actions);
    let mut iterations = Vec::with_capacity(total);
    let mut state = State::NotImproved;

    for iteration in 0..total {
        let action = rng.random_range(0..actions);
        let metric_after = match (caching, cache[action]) {
            (MetricCaching::Cached, Some(m)) => m,
            _ => {
                let m = metric_fn(action)?;
                cache[action] = Some(m);
                m
            }
        };
        let reward = compute_reward(baseline, metric_after)?;
        let next = next_state(baseline, metric_after)?;
        table.update(state, action, reward, next, cfg)?;
        debug_assert!(table.max_abs() <= cfg.q_bound() + 1e-12);
        iterations.push(IterationRecord {
            iteration,
            action,
            metric_before: baseline,
            metric_after,
            reward,
            state,
            next_state: next,
            q_snapshot: table.clone(),
        });
        state = next;
    }

    Ok(EpisodeTrace {
        selected_action: table.select_optimal_action(),
        iterations,
    })
}
