//! Deterministic asynchronous execution.
//!
//! Each worker holds one outstanding iterate. When its sampled latency
//! elapses it replies, the master processes the reply, and the new iterate
//! goes straight back to that worker. The earliest completion is served
//! first and ties go to the lower worker id, so a run is a pure function of
//! its inputs and seed.
//!
//! The index `t` counts processed messages. Delays and epochs are defined on
//! that index from the per-worker communication history.

use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::master::{MasterState, StepRecord};
use crate::objectives::{global_gradient, global_loss, ReferenceOptimum, Shard};
use crate::worker::{HessianApprox, WorkerState};
use crate::{Error, Result, Vector};

/// Source of worker latencies or of the service order itself.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DelayModel {
    /// Every round takes the same time.
    Constant { latency: f64 },
    /// Integer latency drawn uniformly from `lo..=hi`.
    UniformInteger { lo: u32, hi: u32 },
    /// Fixed latency per worker.
    PerWorkerConstant { latencies: Vec<f64> },
    /// Each worker gets a fixed speed factor in `[1, spread]`; each round
    /// takes `base · factor · U` with `U` uniform in `[0.5, 1.5)`.
    Heterogeneous { base: f64, spread: f64 },
    /// Random service order in which every worker is served at least once
    /// in any `max_delay + 1` consecutive updates. Virtual time equals `t`.
    BoundedDelay { max_delay: usize },
    /// The given worker order, repeated. Virtual time equals `t`.
    Scripted { order: Vec<usize> },
}

impl DelayModel {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            DelayModel::Constant { latency } if !(*latency > 0.0 && latency.is_finite()) => {
                bad(format!("latency must be positive and finite, got {latency}"))
            }
            DelayModel::UniformInteger { lo, hi } if *lo == 0 || lo > hi => {
                bad(format!("uniform latency range {lo}..={hi} must satisfy 1 <= lo <= hi"))
            }
            DelayModel::PerWorkerConstant { latencies } => {
                if latencies.len() != n {
                    bad(format!("{} latencies given for {n} workers", latencies.len()))
                } else if latencies.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    bad("latencies must be positive and finite".into())
                } else {
                    Ok(())
                }
            }
            DelayModel::Heterogeneous { base, spread }
                if !(*base > 0.0 && base.is_finite() && *spread >= 1.0 && spread.is_finite()) =>
            {
                bad(format!("heterogeneous delays need base > 0 and spread >= 1, got {base}, {spread}"))
            }
            DelayModel::BoundedDelay { max_delay } if max_delay + 1 < n => {
                bad(format!("max delay {max_delay} cannot serve {n} workers (needs at least {})", n - 1))
            }
            DelayModel::Scripted { order } => {
                if order.is_empty() || order.iter().any(|&i| i >= n) {
                    bad("scripted order must be non-empty with ids below the worker count".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// When a run ends.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StopRule {
    pub max_updates: usize,
    pub max_epochs: Option<usize>,
    pub grad_tol: Option<f64>,
    pub subopt_tol: Option<f64>,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { max_updates: 10_000, max_epochs: None, grad_tol: None, subopt_tol: None }
    }
}

impl StopRule {
    pub fn updates(max_updates: usize) -> Self {
        Self { max_updates, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxUpdates,
    MaxEpochs,
    GradTol,
    SuboptTol,
}

/// Per-worker ordered update indices at which that worker communicated.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommHistory {
    comms: Vec<Vec<usize>>,
}

impl CommHistory {
    pub fn new(n: usize) -> Self {
        Self { comms: vec![Vec::new(); n] }
    }

    /// Builds a history from explicit per-worker lists, which must be
    /// strictly increasing, start at 1 or later, and not share times.
    pub fn from_lists(comms: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for list in &comms {
            if list.first() == Some(&0) || list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("communication times must be strictly increasing from 1".into()));
            }
            if !list.iter().all(|t| seen.insert(*t)) {
                return Err(Error::Config("two workers share a communication time".into()));
            }
        }
        Ok(Self { comms })
    }

    /// History of a service order: `order[k]` communicated at `t = k + 1`.
    pub fn from_order(n: usize, order: &[usize]) -> Self {
        let mut h = Self::new(n);
        for (k, &i) in order.iter().enumerate() {
            h.comms[i].push(k + 1);
        }
        h
    }

    pub fn n_workers(&self) -> usize {
        self.comms.len()
    }

    pub fn comms(&self, i: usize) -> &[usize] {
        &self.comms[i]
    }

    pub fn record(&mut self, t: usize, i: usize) {
        debug_assert!(self.comms[i].last().is_none_or(|&l| l < t));
        self.comms[i].push(t);
    }

    /// Latest update index at which any worker communicated.
    pub fn horizon(&self) -> usize {
        self.comms.iter().filter_map(|c| c.last().copied()).max().unwrap_or(0)
    }

    /// Marks update 0 as a communication from every worker, as happens when
    /// the master collects the initial states.
    pub fn with_initial_exchange(mut self) -> Self {
        for list in &mut self.comms {
            if list.first() != Some(&0) {
                list.insert(0, 0);
            }
        }
        self
    }

    /// Whether every worker communicated at update 0.
    pub fn has_initial_exchange(&self) -> bool {
        self.comms.iter().all(|c| c.first() == Some(&0))
    }

    /// Worker ids in communication order for `t ≥ 1`; entry 0 is `None`.
    pub fn order(&self) -> Vec<Option<usize>> {
        let mut order = vec![None; self.horizon() + 1];
        for (i, list) in self.comms.iter().enumerate() {
            for &t in list.iter().filter(|&&t| t > 0) {
                order[t] = Some(i);
            }
        }
        order
    }

    fn last_at_or_before(&self, i: usize, t: usize) -> Option<usize> {
        let list = &self.comms[i];
        let k = list.partition_point(|&c| c <= t);
        (k > 0).then(|| list[k - 1])
    }
}

/// `d_i^t`: updates elapsed since worker `i` last communicated at or before `t`.
pub fn delay(history: &CommHistory, t: usize, i: usize) -> Result<usize> {
    history
        .last_at_or_before(i, t)
        .map(|last| t - last)
        .ok_or(Error::InsufficientHistory { worker: i, t })
}

/// `(d_i^t, D_i^t)` with `D_i^t = d_i^t + d_i^{t−d_i^t−1} + 1`.
pub fn delays(history: &CommHistory, t: usize, i: usize) -> Result<(usize, usize)> {
    let d = delay(history, t, i)?;
    let earlier = (t - d).checked_sub(1).ok_or(Error::InsufficientHistory { worker: i, t })?;
    let d_prev = delay(history, earlier, i).map_err(|_| Error::InsufficientHistory { worker: i, t })?;
    Ok((d, d + d_prev + 1))
}

/// Increasing epoch start times, `E₁ = 0`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct EpochIndex {
    pub starts: Vec<usize>,
}

impl EpochIndex {
    /// Number of epoch boundaries passed at or before `t` (0 during the first
    /// epoch).
    pub fn epoch_of(&self, t: usize) -> usize {
        self.starts.partition_point(|&e| e <= t) - 1
    }

    /// Number of epochs that have both a start and an end.
    pub fn completed(&self) -> usize {
        self.starts.len() - 1
    }
}

/// Online epoch detection. Since `t − D_i^t` is the second most recent
/// communication of worker `i` up to `t`, a new epoch starts at the first
/// update where that time has reached the current epoch start for every
/// worker.
#[derive(Debug, Clone)]
pub struct EpochTracker {
    last: Vec<Option<usize>>,
    second_last: Vec<Option<usize>>,
    starts: Vec<usize>,
}

impl EpochTracker {
    pub fn new(n: usize) -> Self {
        Self { last: vec![None; n], second_last: vec![None; n], starts: vec![0] }
    }

    /// Tracker that counts the initial exchange at update 0 as a
    /// communication from every worker.
    pub fn after_initial_exchange(n: usize) -> Self {
        Self { last: vec![Some(0); n], second_last: vec![None; n], starts: vec![0] }
    }

    /// Records that worker `i` communicated at `t`; returns `true` when `t`
    /// starts a new epoch.
    pub fn record(&mut self, t: usize, i: usize) -> bool {
        self.second_last[i] = self.last[i];
        self.last[i] = Some(t);
        let current = *self.starts.last().unwrap();
        if self.second_last.iter().all(|s| s.is_some_and(|s| s >= current)) {
            self.starts.push(t);
            true
        } else {
            false
        }
    }

    pub fn current_epoch(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn index(&self) -> EpochIndex {
        EpochIndex { starts: self.starts.clone() }
    }
}

/// Epoch starts implied by a history up to update `horizon`.
pub fn compute_epochs(history: &CommHistory, horizon: usize) -> EpochIndex {
    let n = history.n_workers();
    let mut tracker =
        if history.has_initial_exchange() && n > 0 { EpochTracker::after_initial_exchange(n) } else { EpochTracker::new(n) };
    for (t, who) in history.order().into_iter().enumerate().take(horizon + 1).skip(1) {
        if let Some(i) = who {
            tracker.record(t, i);
        }
    }
    tracker.index()
}

/// Random service order of length `len` over `n` workers in which every
/// worker appears in every window of `max_delay + 1` consecutive updates
/// (counting update 0 as a common starting point).
pub fn bounded_delay_order(n: usize, max_delay: usize, len: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    DelayModel::BoundedDelay { max_delay }.validate(n)?;
    let mut scheduler = BoundedScheduler::new(n, max_delay);
    Ok((0..len).map(|_| scheduler.next(rng)).collect())
}

#[derive(Debug, Clone)]
struct BoundedScheduler {
    last: Vec<usize>,
    max_delay: usize,
    t: usize,
}

impl BoundedScheduler {
    fn new(n: usize, max_delay: usize) -> Self {
        Self { last: vec![0; n], max_delay, t: 0 }
    }

    fn feasible_after(&self, pick: usize) -> bool {
        let t = self.t + 1;
        let mut deadlines: Vec<usize> = self
            .last
            .iter()
            .enumerate()
            .map(|(i, &l)| if i == pick { t } else { l } + self.max_delay + 1)
            .collect();
        deadlines.sort_unstable();
        deadlines.iter().enumerate().all(|(k, &dl)| dl > t + k)
    }

    fn next(&mut self, rng: &mut impl Rng) -> usize {
        let candidates: Vec<usize> = (0..self.last.len()).filter(|&i| self.feasible_after(i)).collect();
        let pick = candidates[rng.random_range(0..candidates.len())];
        self.t += 1;
        self.last[pick] = self.t;
        pick
    }
}

/// One row of the trace. `worker_id` is empty for the starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub epoch: usize,
    pub virtual_time: f64,
    pub worker_id: Option<usize>,
    pub suboptimality: Option<f64>,
    pub grad_norm: f64,
    pub dist_to_opt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

/// Shortest text that parses back to the same `f64`, in plain notation for
/// moderate magnitudes and scientific notation otherwise.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

pub const TRACE_HEADER: &str = "t,epoch,virtual_time,worker_id,suboptimality,grad_norm,dist_to_opt";

impl Trace {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.t,
                r.epoch,
                fmt_f64(r.virtual_time),
                r.worker_id.map(|i| i.to_string()).unwrap_or_default(),
                opt(r.suboptimality),
                fmt_f64(r.grad_norm),
                opt(r.dist_to_opt)
            );
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(TRACE_HEADER) {
            return Err(Error::Parse { line: 1, msg: "unexpected trace header".into() });
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let line_no = k + 2;
            let err = |msg: &str| Error::Parse { line: line_no, msg: msg.to_string() };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(err("expected 7 columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            rows.push(TraceRow {
                t: cols[0].parse().map_err(|_| err("bad t"))?,
                epoch: cols[1].parse().map_err(|_| err("bad epoch"))?,
                virtual_time: num(cols[2])?,
                worker_id: if cols[3].is_empty() {
                    None
                } else {
                    Some(cols[3].parse().map_err(|_| err("bad worker id"))?)
                },
                suboptimality: opt(cols[4])?,
                grad_norm: num(cols[5])?,
                dist_to_opt: opt(cols[6])?,
            });
        }
        Ok(Self { rows })
    }

    /// First row whose suboptimality is at or below `tol`.
    pub fn first_below(&self, tol: f64) -> Option<&TraceRow> {
        self.rows.iter().find(|r| r.suboptimality.is_some_and(|s| s <= tol))
    }
}

/// Computes the trace metrics for an iterate.
#[derive(Debug, Clone, Copy)]
pub struct Metrics<'a> {
    pub shards: &'a [Shard],
    pub reference: Option<&'a ReferenceOptimum>,
}

impl Metrics<'_> {
    pub fn row(&self, t: usize, epoch: usize, virtual_time: f64, worker_id: Option<usize>, x: &Vector) -> TraceRow {
        TraceRow {
            t,
            epoch,
            virtual_time,
            worker_id,
            suboptimality: self.reference.map(|r| global_loss(self.shards, x) - r.f_star),
            grad_norm: global_gradient(self.shards, x).norm(),
            dist_to_opt: self.reference.map(|r| (x - &r.x_star).norm()),
        }
    }
}

/// Outcome of a simulated run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub history: CommHistory,
    pub epochs: EpochIndex,
    pub stop_reason: StopReason,
    pub skipped_messages: usize,
}

enum Clock {
    Events { next_done: Vec<f64>, latency: LatencySource },
    Ordered { source: OrderSource },
}

enum OrderSource {
    Bounded(BoundedScheduler, ChaCha8Rng),
    Scripted(Vec<usize>, usize),
}

struct LatencySource {
    model: DelayModel,
    streams: Vec<ChaCha8Rng>,
    factors: Vec<f64>,
}

impl LatencySource {
    fn sample(&mut self, i: usize) -> f64 {
        match &self.model {
            DelayModel::Constant { latency } => *latency,
            DelayModel::UniformInteger { lo, hi } => self.streams[i].random_range(*lo..=*hi) as f64,
            DelayModel::PerWorkerConstant { latencies } => latencies[i],
            DelayModel::Heterogeneous { base, .. } => {
                base * self.factors[i] * (0.5 + self.streams[i].random::<f64>())
            }
            DelayModel::BoundedDelay { .. } | DelayModel::Scripted { .. } => unreachable!(),
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Clock {
    fn new(model: &DelayModel, n: usize, seed: u64) -> Self {
        match model {
            DelayModel::BoundedDelay { max_delay } => Clock::Ordered {
                source: OrderSource::Bounded(BoundedScheduler::new(n, *max_delay), stream(seed, n as u64 + 1)),
            },
            DelayModel::Scripted { order } => Clock::Ordered { source: OrderSource::Scripted(order.clone(), 0) },
            _ => {
                let factors = match model {
                    DelayModel::Heterogeneous { spread, .. } => {
                        let mut rng = stream(seed, n as u64);
                        (0..n).map(|_| rng.random_range(1.0..=*spread)).collect()
                    }
                    _ => vec![1.0; n],
                };
                let mut latency = LatencySource {
                    model: model.clone(),
                    streams: (0..n as u64).map(|i| stream(seed, i)).collect(),
                    factors,
                };
                let next_done = (0..n).map(|i| latency.sample(i)).collect();
                Clock::Events { next_done, latency }
            }
        }
    }

    /// Next worker to finish and the completion time.
    fn pop(&mut self, t_next: usize) -> (usize, f64) {
        match self {
            Clock::Events { next_done, .. } => {
                let mut best = 0;
                for (i, &c) in next_done.iter().enumerate().skip(1) {
                    if c < next_done[best] {
                        best = i;
                    }
                }
                (best, next_done[best])
            }
            Clock::Ordered { source } => {
                let i = match source {
                    OrderSource::Bounded(s, rng) => s.next(rng),
                    OrderSource::Scripted(order, k) => {
                        let i = order[*k % order.len()];
                        *k += 1;
                        i
                    }
                };
                (i, t_next as f64)
            }
        }
    }

    /// Worker `i` received a new iterate at time `now`.
    fn dispatch(&mut self, i: usize, now: f64) {
        if let Clock::Events { next_done, latency } = self {
            next_done[i] = now + latency.sample(i);
        }
    }
}

/// Durations of synchronous rounds under a delay model: every worker draws
/// its latency and the round lasts as long as the slowest one. Service-order
/// models have no latencies; their rounds last `n`, matching virtual time
/// `= t`.
pub struct SyncRoundClock {
    latency: Option<LatencySource>,
    n: usize,
}

impl SyncRoundClock {
    pub fn new(model: &DelayModel, n: usize, seed: u64) -> Result<Self> {
        model.validate(n)?;
        let latency = match Clock::new(model, n, seed) {
            Clock::Events { latency, .. } => Some(latency),
            Clock::Ordered { .. } => None,
        };
        Ok(Self { latency, n })
    }

    pub fn next_round(&mut self) -> f64 {
        match &mut self.latency {
            Some(l) => (0..self.n).map(|i| l.sample(i)).fold(0.0, f64::max),
            None => self.n as f64,
        }
    }
}

/// Runs the protocol until the stop rule fires. `observe` sees the workers
/// and master after every processed message.
pub fn run<E, F>(
    workers: &mut [WorkerState<E>],
    master: &mut MasterState<E>,
    delay_model: &DelayModel,
    seed: u64,
    stop: &StopRule,
    metrics: Metrics<'_>,
    mut observe: F,
) -> Result<RunOutput>
where
    E: HessianApprox,
    F: FnMut(&[WorkerState<E>], &MasterState<E>, &StepRecord),
{
    let n = workers.len();
    if n != master.n_workers() {
        return Err(Error::Config(format!("{n} workers for a master expecting {}", master.n_workers())));
    }
    delay_model.validate(n)?;
    if stop.subopt_tol.is_some() && metrics.reference.is_none() {
        return Err(Error::Config("a suboptimality target needs a reference optimum".into()));
    }

    let mut clock = Clock::new(delay_model, n, seed);
    let mut history = CommHistory::new(n).with_initial_exchange();
    let mut tracker = EpochTracker::after_initial_exchange(n);
    let mut trace = Trace::default();
    let mut skipped = 0;

    let first = metrics.row(0, 0, 0.0, None, master.x());
    let mut reason = check_stop(stop, &first, 0, 0);
    trace.rows.push(first);

    while reason.is_none() {
        let t = master.t() + 1;
        let (i, now) = clock.pop(t);
        let x_i = master.sent_to(i).clone();
        let msg = workers[i].step(&x_i);
        if msg.skipped() {
            skipped += 1;
        }
        let record = master.step(&msg)?;
        debug_assert_eq!(record.t, t);
        clock.dispatch(i, now);
        history.record(t, i);
        tracker.record(t, i);
        observe(workers, master, &record);

        let row = metrics.row(t, tracker.current_epoch(), now, Some(i), master.x());
        reason = check_stop(stop, &row, t, tracker.current_epoch());
        trace.rows.push(row);
    }

    Ok(RunOutput {
        trace,
        history,
        epochs: tracker.index(),
        stop_reason: reason.unwrap(),
        skipped_messages: skipped,
    })
}

/// Shared by every runner: the first rule that fires, if any.
pub fn check_stop(stop: &StopRule, row: &TraceRow, t: usize, epochs_done: usize) -> Option<StopReason> {
    if stop.subopt_tol.is_some_and(|tol| row.suboptimality.is_some_and(|s| s <= tol)) {
        Some(StopReason::SuboptTol)
    } else if stop.grad_tol.is_some_and(|tol| row.grad_norm <= tol) {
        Some(StopReason::GradTol)
    } else if stop.max_epochs.is_some_and(|m| epochs_done >= m) {
        Some(StopReason::MaxEpochs)
    } else if t >= stop.max_updates {
        Some(StopReason::MaxUpdates)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_history() -> CommHistory {
        CommHistory::from_lists(vec![vec![1, 5, 7]]).unwrap()
    }

    #[test]
    fn worked_delay_example() {
        let h = paper_history();
        let d: Vec<usize> = (4..=8).map(|t| delay(&h, t, 0).unwrap()).collect();
        assert_eq!(d, vec![3, 0, 1, 0, 1]);
        assert_eq!(delays(&h, 7, 0).unwrap().1, 2);
        assert_eq!(delays(&h, 8, 0).unwrap().1, 3);
        assert_eq!(delays(&h, 6, 0).unwrap().1, 5);
    }

    #[test]
    fn insufficient_history() {
        let h = paper_history();
        assert!(matches!(delay(&h, 0, 0), Err(Error::InsufficientHistory { .. })));
        assert!(delays(&h, 4, 0).is_err());
        assert!(delays(&h, 5, 0).is_ok());
    }

    #[test]
    fn single_worker_epochs() {
        let h = CommHistory::from_lists(vec![vec![1, 5, 7, 9]]).unwrap();
        assert_eq!(compute_epochs(&h, 9).starts, vec![0, 5, 7, 9]);
        assert_eq!(compute_epochs(&h, 6).starts, vec![0, 5]);
        let h = h.with_initial_exchange();
        assert_eq!(compute_epochs(&h, 9).starts, vec![0, 1, 5, 7, 9]);
    }

    #[test]
    fn from_lists_rejects_bad_input() {
        assert!(CommHistory::from_lists(vec![vec![3, 2]]).is_err());
        assert!(CommHistory::from_lists(vec![vec![0, 2]]).is_err());
        assert!(CommHistory::from_lists(vec![vec![1, 2], vec![2]]).is_err());
    }

    #[test]
    fn bounded_scheduler_with_tight_bound_is_cyclic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let order = bounded_delay_order(4, 3, 40, &mut rng).unwrap();
        for k in 4..40 {
            assert_eq!(order[k], order[k - 4]);
        }
        assert!(bounded_delay_order(5, 3, 10, &mut rng).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let trace = Trace {
            rows: vec![
                TraceRow {
                    t: 0,
                    epoch: 0,
                    virtual_time: 0.0,
                    worker_id: None,
                    suboptimality: Some(0.1),
                    grad_norm: 1.5,
                    dist_to_opt: None,
                },
                TraceRow {
                    t: 1,
                    epoch: 0,
                    virtual_time: 0.30000000000000004,
                    worker_id: Some(2),
                    suboptimality: Some(1e-17),
                    grad_norm: 2.0,
                    dist_to_opt: Some(3.25),
                },
            ],
        };
        let csv = trace.to_csv();
        assert!(csv.starts_with(TRACE_HEADER));
        assert_eq!(Trace::parse_csv(&csv).unwrap(), trace);
    }
}
