//! Deterministic replay of the offline exploration loop.
//!
//! A [`Simulation`] owns a ground-truth latency matrix and a partially observed
//! copy of it. Each batch, the configured policy proposes cells, the simulator
//! "runs" them by reading the truth (applying the timeout), and charges the
//! seconds against the exploration budget. The run that would overdraw the
//! budget is cut short at the remaining budget and recorded as censored.

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::completion::{als_complete, AlsConfig, Factorization};
use crate::error::{Error, Result};
use crate::matrix::{Entry, GroundTruth, WorkloadState};
use crate::policy::{
    select_cost_greedy, select_greedy, select_limeqo, select_random, Candidate, PolicyConfig,
    PolicyKind,
};

const POLICY_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const ALS_STREAM: u64 = 0xc2b2_ae3d_27d4_eb4f;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub policy: PolicyConfig,
    /// Only used by LimeQO.
    pub als: AlsConfig,
    /// Seconds of exploration available.
    pub budget: f64,
    /// Batches between model refits.
    pub refit_every: usize,
    /// Whether default-plan runs count against the budget.
    pub charge_default: bool,
    /// Batches between trace points.
    pub record_every: usize,
}

impl SimConfig {
    pub fn new(kind: PolicyKind, budget: f64) -> Self {
        Self {
            policy: PolicyConfig::new(kind),
            als: AlsConfig::default(),
            budget,
            refit_every: 1,
            charge_default: false,
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if !(self.budget > 0.0) || self.budget.is_nan() {
            return Err(Error::DegenerateConfig(format!(
                "budget must be positive, got {}",
                self.budget
            )));
        }
        if self.refit_every == 0 || self.record_every == 0 {
            return Err(Error::DegenerateConfig(
                "refit_every and record_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub explore_seconds: f64,
    pub workload_latency: f64,
    pub n_complete: usize,
    pub n_censored: usize,
    /// Number of shift events applied before this point.
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationTrace {
    pub points: Vec<TracePoint>,
    /// Best observed hint per query at the end of the run.
    pub final_hints: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShiftKind {
    /// New queries arrive; rows are appended.
    Workload(GroundTruth),
    /// The data changes; the latency oracle is replaced wholesale.
    Data(GroundTruth),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftEvent {
    /// Exploration seconds at which the shift takes effect.
    pub at: f64,
    pub kind: ShiftKind,
}

/// Every query starts with its default plan measured; nothing else is known.
pub fn bootstrap(truth: &GroundTruth, default_hint: usize) -> Result<WorkloadState> {
    let mut state = WorkloadState::new(truth.n_queries(), truth.n_hints(), default_hint)?;
    for i in 0..truth.n_queries() {
        state.set(i, default_hint, Entry::Complete(truth.get(i, default_hint)))?;
    }
    Ok(state)
}

pub struct Simulation {
    truth: GroundTruth,
    state: WorkloadState,
    cfg: SimConfig,
    costs: Option<DMatrix<f64>>,
    spent: f64,
    policy_rng: ChaCha8Rng,
    als_rng: ChaCha8Rng,
    model: Option<Factorization>,
    batches_since_fit: usize,
    segment: usize,
}

impl Simulation {
    /// Policy and model randomness come from two streams derived from `seed`;
    /// the seeds inside `cfg.policy` and `cfg.als` are not used here.
    pub fn new(truth: GroundTruth, default_hint: usize, cfg: SimConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let state = bootstrap(&truth, default_hint)?;
        let spent = state.exploration_time(cfg.charge_default);
        Ok(Self {
            truth,
            state,
            cfg,
            costs: None,
            spent,
            policy_rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(POLICY_STREAM)),
            als_rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(ALS_STREAM)),
            model: None,
            batches_since_fit: 0,
            segment: 0,
        })
    }

    /// Optimizer cost estimates for the cost-greedy policy. Must cover every
    /// row the simulation will ever hold, including rows added by shifts.
    pub fn with_costs(mut self, costs: DMatrix<f64>) -> Self {
        self.costs = Some(costs);
        self
    }

    pub fn state(&self) -> &WorkloadState {
        &self.state
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    /// Seconds charged so far.
    pub fn spent(&self) -> f64 {
        self.spent
    }

    fn point(&self) -> Result<TracePoint> {
        Ok(TracePoint {
            explore_seconds: self.spent,
            workload_latency: self.state.workload_latency()?,
            n_complete: self.state.n_complete(),
            n_censored: self.state.n_censored(),
            segment: self.segment,
        })
    }

    fn apply_shift(&mut self, kind: &ShiftKind) -> Result<()> {
        let d = self.state.default_hint();
        match kind {
            ShiftKind::Workload(rows) => {
                let start = self.state.n_queries();
                self.truth.append_rows(rows)?;
                self.state.append_rows(rows.n_queries());
                for i in start..self.state.n_queries() {
                    self.state
                        .set(i, d, Entry::Complete(self.truth.get(i, d)))?;
                }
            }
            ShiftKind::Data(next) => {
                if next.values().shape() != self.truth.values().shape() {
                    return Err(Error::ShapeMismatch {
                        expected: self.truth.values().shape(),
                        found: next.values().shape(),
                    });
                }
                let hints = self.state.best_hints()?;
                self.truth = next.clone();
                for (i, &j) in hints.iter().enumerate() {
                    self.state.clear_row(i);
                    self.state
                        .set(i, d, Entry::Complete(self.truth.get(i, d)))?;
                    self.state
                        .set(i, j, Entry::Complete(self.truth.get(i, j)))?;
                }
            }
        }
        self.segment += 1;
        self.model = None;
        Ok(())
    }

    fn select(&mut self) -> Result<Vec<Candidate>> {
        let p = self.cfg.policy;
        let seed = self.policy_rng.next_u64();
        match p.kind {
            PolicyKind::Random => select_random(&self.state, p.batch, seed),
            PolicyKind::Greedy => select_greedy(&self.state, p.batch, seed),
            PolicyKind::CostGreedy => {
                let costs = self.costs.as_ref().ok_or_else(|| {
                    Error::DegenerateConfig("cost policy needs a cost matrix".into())
                })?;
                let (n, k) = self.state.shape();
                if costs.nrows() < n || costs.ncols() != k {
                    return Err(Error::ShapeMismatch {
                        expected: (n, k),
                        found: costs.shape(),
                    });
                }
                select_cost_greedy(&self.state, &costs.rows(0, n).into_owned(), p.batch)
            }
            PolicyKind::LimeQo => {
                if self.state.explorable().is_empty() {
                    return Err(Error::NothingToExplore);
                }
                if self.model.is_none() || self.batches_since_fit >= self.cfg.refit_every {
                    let als = AlsConfig {
                        seed: self.als_rng.next_u64(),
                        ..self.cfg.als
                    };
                    self.model = Some(als_complete(&self.state, &als)?);
                    self.batches_since_fit = 0;
                }
                self.batches_since_fit += 1;
                let model = self.model.as_ref().expect("model fitted above");
                select_limeqo(&self.state, model, p.batch, p.alpha, seed)
            }
        }
    }

    /// Runs one candidate. Returns false if the run had to be cut short, which
    /// exhausts the budget.
    fn execute(&mut self, c: &Candidate) -> Result<bool> {
        let budget = self.cfg.budget;
        let truth = self.truth.get(c.query, c.hint);
        let charge = if truth < c.timeout { truth } else { c.timeout };
        if self.spent + charge <= budget {
            self.spent += self.state.observe(c.query, c.hint, truth, c.timeout)?;
            return Ok(true);
        }
        // cut the run short at whatever budget is left
        let floor = self
            .state
            .entry(c.query, c.hint)
            .censored_bound()
            .unwrap_or(0.0);
        let mut timeout = budget - self.spent;
        while timeout > 0.0 && self.spent + timeout > budget {
            timeout = timeout.next_down();
        }
        if timeout > floor {
            self.spent += self.state.observe(c.query, c.hint, truth, timeout)?;
        }
        Ok(false)
    }

    /// Replays exploration until the budget runs out or nothing is left to explore.
    /// `shifts` must be sorted by `at`.
    pub fn run(&mut self, shifts: &[ShiftEvent]) -> Result<ExplorationTrace> {
        if shifts.windows(2).any(|w| w[0].at > w[1].at) {
            return Err(Error::DegenerateConfig(
                "shift events must be sorted by time".into(),
            ));
        }
        let mut pending = shifts.iter().peekable();
        let mut points = vec![self.point()?];
        let mut batches = 0usize;
        let mut unrecorded = false;

        loop {
            while let Some(s) = pending.next_if(|s| s.at <= self.spent) {
                self.apply_shift(&s.kind)?;
            }
            if self.spent >= self.cfg.budget {
                break;
            }
            let batch = match self.select() {
                Ok(b) => b,
                Err(Error::NothingToExplore) => match pending.next() {
                    // idle until the next shift brings new work
                    Some(s) => {
                        self.apply_shift(&s.kind)?;
                        continue;
                    }
                    None => break,
                },
                Err(e) => return Err(e),
            };

            let mut open = true;
            for c in &batch {
                if self.execute(c)? {
                    unrecorded = true;
                } else {
                    open = false;
                    break;
                }
            }
            batches += 1;
            if unrecorded && (!open || batches.is_multiple_of(self.cfg.record_every)) {
                points.push(self.point()?);
                unrecorded = false;
            }
            if !open {
                break;
            }
        }
        if unrecorded {
            points.push(self.point()?);
        }
        // shifts crossed by the final batch still shape the final state
        let spent = self.spent;
        while let Some(s) = pending.next_if(|s| s.at <= spent) {
            self.apply_shift(&s.kind)?;
        }

        Ok(ExplorationTrace {
            points,
            final_hints: self.state.best_hints()?,
        })
    }
}

/// Builds a simulation from `truth` and runs it to completion.
pub fn run(
    truth: &GroundTruth,
    default_hint: usize,
    cfg: &SimConfig,
    shifts: &[ShiftEvent],
    seed: u64,
) -> Result<ExplorationTrace> {
    Simulation::new(truth.clone(), default_hint, *cfg, seed)?.run(shifts)
}

/// Per-query regression cap for trying an unverified plan online.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardConfig {
    /// Maximum seconds any single query may lose to a failed trial.
    pub regression_cap: f64,
    /// Also bound each trial by the workload's remaining headroom.
    pub tail_headroom: bool,
}

impl GuardConfig {
    pub fn execute(
        &self,
        default_latency: f64,
        candidate_latency: f64,
        headroom: f64,
    ) -> (f64, bool) {
        let headroom = if self.tail_headroom {
            headroom
        } else {
            f64::INFINITY
        };
        guarded_latency(
            default_latency,
            candidate_latency,
            headroom,
            self.regression_cap,
        )
    }
}

/// Tries a candidate plan with a timeout of `min(headroom, cap)`; on timeout
/// falls back to the default plan. Returns the seconds the query took and
/// whether the candidate was adopted.
pub fn guarded_latency(
    default_latency: f64,
    candidate_latency: f64,
    headroom: f64,
    cap: f64,
) -> (f64, bool) {
    let trial = headroom.min(cap);
    if candidate_latency < trial {
        (candidate_latency, true)
    } else {
        (trial + default_latency, false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub policy: String,
    pub budget: f64,
    pub mean_latency: f64,
    pub stddev: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Final workload latency of every (config, budget) pair averaged over
/// `seeds`, plus `Default` and `Optimal` reference rows for each budget.
/// Each config's own budget is replaced by the budgets listed here.
pub fn compare_policies(
    truth: &GroundTruth,
    default_hint: usize,
    configs: &[SimConfig],
    budgets: &[f64],
    seeds: &[u64],
    costs: Option<&DMatrix<f64>>,
) -> Result<Vec<ReportRow>> {
    if seeds.is_empty() {
        return Err(Error::DegenerateConfig(
            "at least one seed is required".into(),
        ));
    }
    let jobs: Vec<(usize, usize, u64)> = budgets
        .iter()
        .enumerate()
        .flat_map(|(b, _)| {
            (0..configs.len()).flat_map(move |c| seeds.iter().map(move |&s| (b, c, s)))
        })
        .collect();
    let finals: Vec<f64> = jobs
        .par_iter()
        .map(|&(b, c, seed)| {
            let cfg = SimConfig {
                budget: budgets[b],
                ..configs[c]
            };
            let mut sim = Simulation::new(truth.clone(), default_hint, cfg, seed)?;
            if let Some(costs) = costs {
                sim = sim.with_costs(costs.clone());
            }
            sim.run(&[])?;
            sim.state().workload_latency()
        })
        .collect::<Result<_>>()?;

    let default = truth.column_latency(default_hint);
    let optimal = truth.optimal_latency();
    let mut rows = Vec::new();
    for (b, &budget) in budgets.iter().enumerate() {
        rows.push(ReportRow {
            policy: "Default".into(),
            budget,
            mean_latency: default,
            stddev: 0.0,
        });
        for (c, cfg) in configs.iter().enumerate() {
            let offset = (b * configs.len() + c) * seeds.len();
            let (mean, stddev) = mean_std(&finals[offset..offset + seeds.len()]);
            rows.push(ReportRow {
                policy: cfg.policy.kind.name().into(),
                budget,
                mean_latency: mean,
                stddev,
            });
        }
        rows.push(ReportRow {
            policy: "Optimal".into(),
            budget,
            mean_latency: optimal,
            stddev: 0.0,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(rows: &[Vec<f64>]) -> GroundTruth {
        GroundTruth::from_rows(rows).unwrap()
    }

    #[test]
    fn bootstrap_reveals_default_column() {
        let w = truth(&[vec![3.0, 1.0], vec![2.0, 4.0]]);
        let s = bootstrap(&w, 0).unwrap();
        assert_eq!(s.entry(0, 0), Entry::Complete(3.0));
        assert_eq!(s.entry(1, 0), Entry::Complete(2.0));
        assert_eq!(s.entry(0, 1), Entry::Unobserved);
        assert_eq!(s.entry(1, 1), Entry::Unobserved);
        assert_eq!(s.workload_latency().unwrap(), 5.0);
        assert_eq!(s.exploration_time(false), 0.0);
    }

    #[test]
    fn tiny_budget_keeps_defaults() {
        let w = truth(&[vec![3.0, 1.0], vec![2.0, 4.0]]);
        for kind in [PolicyKind::Random, PolicyKind::Greedy] {
            let cfg = SimConfig::new(kind, 0.001);
            let mut sim = Simulation::new(w.clone(), 0, cfg, 1).unwrap();
            let trace = sim.run(&[]).unwrap();
            assert_eq!(trace.points.len(), 1);
            assert_eq!(trace.final_hints, vec![0, 0]);
            assert!(sim.spent() <= 0.001);
        }
    }

    #[test]
    fn exhaustive_random_reaches_optimum() {
        let w = truth(&[
            vec![3.0, 1.0, 2.5],
            vec![2.0, 4.0, 0.5],
            vec![6.0, 6.5, 7.0],
        ]);
        let cfg = SimConfig::new(PolicyKind::Random, w.total_mass());
        let mut sim = Simulation::new(w.clone(), 0, cfg, 5).unwrap();
        let trace = sim.run(&[]).unwrap();
        let last = trace.points.last().unwrap();
        assert_eq!(last.workload_latency, 1.0 + 0.5 + 6.0);
        assert_eq!(trace.final_hints, vec![1, 2, 0]);
    }

    #[test]
    fn budget_cut_is_censored_and_exact() {
        let w = truth(&[vec![10.0, 8.0, 9.0]]);
        let mut cfg = SimConfig::new(PolicyKind::Random, 3.0);
        cfg.policy.batch = 1;
        let mut sim = Simulation::new(w, 0, cfg, 0).unwrap();
        sim.run(&[]).unwrap();
        assert_eq!(sim.spent(), 3.0);
        assert_eq!(sim.state().n_censored(), 1);
        assert_eq!(sim.state().exploration_time(false), 3.0);
    }

    #[test]
    fn workload_shift_appends_rows() {
        let w = truth(&[vec![3.0, 1.0], vec![2.0, 4.0]]);
        let extra = truth(&[vec![5.0, 2.0]]);
        let cfg = SimConfig::new(PolicyKind::Random, 100.0);
        let mut sim = Simulation::new(w, 0, cfg, 2).unwrap();
        let shifts = [ShiftEvent {
            at: 0.5,
            kind: ShiftKind::Workload(extra),
        }];
        let trace = sim.run(&shifts).unwrap();
        assert_eq!(sim.state().n_queries(), 3);
        assert_eq!(trace.final_hints, vec![1, 0, 1]);
        assert_eq!(trace.points.last().unwrap().segment, 1);
    }

    #[test]
    fn data_shift_keeps_best_hints() {
        let w = truth(&[vec![3.0, 1.0, 9.0], vec![2.0, 4.0, 9.0]]);
        let next = truth(&[vec![3.0, 2.0, 0.5], vec![1.0, 5.0, 9.0]]);
        let mut sim = Simulation::new(w, 0, SimConfig::new(PolicyKind::Random, 100.0), 0).unwrap();
        let hints = sim.run(&[]).unwrap().final_hints;
        assert_eq!(hints, vec![1, 0]);
        sim.apply_shift(&ShiftKind::Data(next)).unwrap();
        let s = sim.state();
        assert_eq!(s.entry(0, 0), Entry::Complete(3.0));
        assert_eq!(s.entry(0, 1), Entry::Complete(2.0));
        assert_eq!(s.entry(0, 2), Entry::Unobserved);
        assert_eq!(s.best_hints().unwrap(), vec![1, 0]);
    }

    #[test]
    fn rejects_unsorted_shifts_and_bad_budget() {
        let w = truth(&[vec![3.0, 1.0]]);
        assert!(Simulation::new(w.clone(), 0, SimConfig::new(PolicyKind::Random, 0.0), 0).is_err());
        let mut sim =
            Simulation::new(w.clone(), 0, SimConfig::new(PolicyKind::Random, 1.0), 0).unwrap();
        let e = |at| ShiftEvent {
            at,
            kind: ShiftKind::Data(w.clone()),
        };
        assert!(sim.run(&[e(2.0), e(1.0)]).is_err());
    }

    #[test]
    fn guard_examples() {
        assert_eq!(guarded_latency(10.0, 4.0, 5.0, 5.0), (4.0, true));
        assert_eq!(guarded_latency(10.0, 20.0, 5.0, 3.0), (13.0, false));
        for cand in [0.0, 0.1, 50.0] {
            assert_eq!(guarded_latency(10.0, cand, 7.0, 0.0), (10.0, false));
        }
        let g = GuardConfig {
            regression_cap: 3.0,
            tail_headroom: false,
        };
        assert_eq!(g.execute(10.0, 2.0, 1.0), (2.0, true));
        let g = GuardConfig {
            tail_headroom: true,
            ..g
        };
        assert_eq!(g.execute(10.0, 2.0, 1.0), (11.0, false));
    }

    #[test]
    fn compare_includes_reference_rows() {
        let w = truth(&[
            vec![3.0, 1.0, 2.0],
            vec![2.0, 4.0, 1.5],
            vec![5.0, 2.5, 6.0],
        ]);
        let configs = [
            SimConfig::new(PolicyKind::Random, 1.0),
            SimConfig::new(PolicyKind::Greedy, 1.0),
        ];
        let rows = compare_policies(&w, 0, &configs, &[1.0, 4.0], &[0, 1, 2], None).unwrap();
        assert_eq!(rows.len(), 8);
        let optimal = w.optimal_latency();
        let default = w.column_latency(0);
        for r in &rows {
            match r.policy.as_str() {
                "Default" => assert_eq!(r.mean_latency, default),
                "Optimal" => assert_eq!(r.mean_latency, 1.0 + 1.5 + 2.5),
                _ => assert!(r.mean_latency >= optimal && r.mean_latency <= default),
            }
        }
    }
}
