use limeqo::completion::Als;
use limeqo::policy::{select_greedy, select_limeqo, select_random};
use limeqo::simulator::{self, guarded_latency, Simulation};
use limeqo::{
    als_complete, synth, AlsConfig, Entry, Factorization, GroundTruth, PolicyKind, ShiftEvent,
    ShiftKind, SimConfig, SynthConfig, WorkloadState,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A ground truth plus a state reached by a random sequence of timed runs.
fn explored(n: usize, k: usize, seed: u64) -> (GroundTruth, WorkloadState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth =
        GroundTruth::new(DMatrix::from_fn(n, k, |_, _| rng.random_range(0.1..10.0))).unwrap();
    let mut state = simulator::bootstrap(&truth, 0).unwrap();
    for _ in 0..n * k {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..k));
        if !state.is_explorable(i, j) {
            continue;
        }
        let timeout = state.row_timeout(i).unwrap() * rng.random_range(0.2..1.0);
        if state
            .entry(i, j)
            .censored_bound()
            .is_some_and(|b| b >= timeout)
        {
            continue;
        }
        state.observe(i, j, truth.get(i, j), timeout).unwrap();
    }
    (truth, state)
}

fn hidden_error(truth: &GroundTruth, mask: &DMatrix<bool>, fit: &Factorization) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for ((&seen, &t), &p) in mask
        .iter()
        .zip(truth.values().iter())
        .zip(fit.estimate.iter())
    {
        if !seen {
            num += (p - t) * (p - t);
            den += t * t;
        }
    }
    (num / den).sqrt()
}

fn reveal(truth: &GroundTruth, fraction: f64, seed: u64) -> (WorkloadState, DMatrix<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = truth.values().shape();
    let mask = DMatrix::from_fn(n, k, |_, j| j == 0 || rng.random::<f64>() < fraction);
    let rows = (0..n)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if mask[(i, j)] {
                        Entry::Complete(truth.get(i, j))
                    } else {
                        Entry::Unobserved
                    }
                })
                .collect()
        })
        .collect();
    (WorkloadState::from_entries(rows, 0).unwrap(), mask)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

#[test]
fn recovery_with_half_observed() {
    let errs: Vec<f64> = (0..20)
        .map(|seed| {
            let truth = synth::generate(&SynthConfig {
                n_queries: 60,
                n_hints: 30,
                rank: 3,
                seed,
                ..Default::default()
            })
            .unwrap();
            let (state, mask) = reveal(&truth, 0.5, seed + 100);
            let cfg = AlsConfig {
                rank: 3,
                seed,
                ..Default::default()
            };
            hidden_error(&truth, &mask, &als_complete(&state, &cfg).unwrap())
        })
        .collect();
    let med = median(errs.clone());
    assert!(med < 0.05, "median hidden error {med}, all {errs:?}");
}

#[test]
fn objective_after_last_iteration_not_above_first() {
    for seed in 0..10 {
        let truth = synth::generate(&SynthConfig {
            n_queries: 40,
            n_hints: 12,
            seed,
            ..Default::default()
        })
        .unwrap();
        let (state, _) = reveal(&truth, 0.5, seed);
        let mut als = Als::new(
            &state,
            &AlsConfig {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        als.step().unwrap();
        let first = als.objective();
        for _ in 1..50 {
            als.step().unwrap();
        }
        assert!(
            als.objective() <= first,
            "seed {seed}: {} > {first}",
            als.objective()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn completion_respects_observations(n in 2usize..9, k in 2usize..7, seed: u64) {
        let (_, state) = explored(n, k, seed);
        let rank = 2.min(n).min(k);
        let cfg = AlsConfig { rank, iterations: 10, seed, ..Default::default() };
        let mut als = Als::new(&state, &cfg).unwrap();
        for _ in 0..cfg.iterations {
            als.step().unwrap();
            let f = als.factorization();
            prop_assert!(f.query_factors.min() >= 0.0 && f.hint_factors.min() >= 0.0);
        }
        let fit = als.factorization();
        prop_assert_eq!(&fit, &als_complete(&state, &cfg).unwrap());
        for i in 0..n {
            for j in 0..k {
                match state.entry(i, j) {
                    Entry::Complete(v) => prop_assert_eq!(fit.get(i, j), v),
                    Entry::Censored(b) => prop_assert!(fit.get(i, j) >= b),
                    Entry::Unobserved => prop_assert!(fit.get(i, j) >= 0.0),
                }
            }
        }
    }

    #[test]
    fn batches_are_fresh_and_capped(n in 2usize..9, k in 2usize..7, m in 1usize..12, alpha in 1.0f64..4.0, seed: u64) {
        let (_, state) = explored(n, k, seed);
        if state.explorable().is_empty() {
            return Ok(());
        }
        let fit = als_complete(&state, &AlsConfig { rank: 1, iterations: 5, seed, ..Default::default() }).unwrap();
        let batches = [
            select_random(&state, m, seed).unwrap(),
            select_greedy(&state, m, seed).unwrap(),
            select_limeqo(&state, &fit, m, alpha, seed).unwrap(),
        ];
        for (p, batch) in batches.iter().enumerate() {
            prop_assert!(batch.len() <= m && !batch.is_empty());
            for (a, c) in batch.iter().enumerate() {
                prop_assert!(!state.entry(c.query, c.hint).is_complete());
                prop_assert!(batch[..a].iter().all(|d| (d.query, d.hint) != (c.query, c.hint)));
                let row = state.row_timeout(c.query).unwrap();
                prop_assert!(c.timeout > 0.0 && c.timeout <= row, "policy {p}: {c:?} row {row}");
            }
        }
        prop_assert_eq!(&batches[2], &select_limeqo(&state, &fit, m, alpha, seed).unwrap());
    }

    #[test]
    fn limeqo_ranking_is_scale_equivariant(n in 2usize..9, k in 2usize..7, m in 1usize..6, c in 0.01f64..100.0, seed: u64) {
        let (_, state) = explored(n, k, seed);
        if state.explorable().is_empty() {
            return Ok(());
        }
        let fit = als_complete(&state, &AlsConfig { rank: 1, iterations: 5, seed, ..Default::default() }).unwrap();
        let scale = |e: Entry| match e {
            Entry::Complete(v) => Entry::Complete(v * c),
            Entry::Censored(b) => Entry::Censored(b * c),
            Entry::Unobserved => Entry::Unobserved,
        };
        let rows = (0..n).map(|i| state.row(i).iter().map(|&e| scale(e)).collect()).collect();
        let scaled = WorkloadState::from_entries(rows, 0).unwrap();
        let scaled_fit = Factorization { estimate: &fit.estimate * c, ..fit.clone() };
        let pick = |b: Vec<limeqo::Candidate>| {
            let mut v: Vec<(usize, usize)> = b.iter().map(|c| (c.query, c.hint)).collect();
            v.sort();
            v
        };
        prop_assert_eq!(
            pick(select_limeqo(&state, &fit, m, 2.0, seed).unwrap()),
            pick(select_limeqo(&scaled, &scaled_fit, m, 2.0, seed).unwrap())
        );
    }

    #[test]
    fn simulation_is_sound(seed: u64, policy in 0usize..3, budget_frac in 0.05f64..1.5) {
        let kind = [PolicyKind::Random, PolicyKind::Greedy, PolicyKind::LimeQo][policy];
        let truth = synth::generate(&SynthConfig {
            n_queries: 12,
            n_hints: 5,
            rank: 2,
            noise: 0.1,
            seed,
            ..Default::default()
        })
        .unwrap();
        let budget = budget_frac * truth.column_latency(0);
        let mut cfg = SimConfig::new(kind, budget);
        cfg.policy.batch = 3;
        cfg.als.iterations = 10;
        let mut sim = Simulation::new(truth.clone(), 0, cfg, seed).unwrap();
        let trace = sim.run(&[]).unwrap();
        let state = sim.state();
        prop_assert!(sim.spent() <= budget);
        prop_assert_eq!(state.exploration_time(false), sim.spent());
        for w in trace.points.windows(2) {
            prop_assert!(w[1].explore_seconds > w[0].explore_seconds);
            prop_assert!(w[1].workload_latency <= w[0].workload_latency);
        }
        for (i, &j) in trace.final_hints.iter().enumerate() {
            prop_assert!(truth.get(i, j) <= truth.get(i, 0));
            for h in 0..truth.n_hints() {
                if let Some(b) = state.entry(i, h).censored_bound() {
                    prop_assert!(b <= truth.get(i, h));
                }
            }
        }
    }

    #[test]
    fn shifted_traces_are_monotone_per_segment(seed: u64, data in any::<bool>()) {
        let truth = synth::generate(&SynthConfig {
            n_queries: 16,
            n_hints: 5,
            rank: 2,
            noise: 0.1,
            seed,
            ..Default::default()
        })
        .unwrap();
        let (start, kind) = if data {
            let next = synth::generate(&SynthConfig {
                n_queries: 16,
                n_hints: 5,
                rank: 2,
                seed: seed.wrapping_add(1),
                ..Default::default()
            })
            .unwrap();
            (truth.clone(), ShiftKind::Data(next))
        } else {
            (truth.rows(0, 11), ShiftKind::Workload(truth.rows(11, 5)))
        };
        let budget = truth.column_latency(0);
        let mut cfg = SimConfig::new(PolicyKind::LimeQo, budget);
        cfg.policy.batch = 3;
        cfg.als.iterations = 10;
        let mut sim = Simulation::new(start, 0, cfg, seed).unwrap();
        let trace = sim.run(&[ShiftEvent { at: budget / 3.0, kind }]).unwrap();
        for w in trace.points.windows(2) {
            prop_assert!(w[1].explore_seconds > w[0].explore_seconds);
            if w[0].segment == w[1].segment {
                prop_assert!(w[1].workload_latency <= w[0].workload_latency);
            }
        }
        prop_assert!(sim.spent() <= budget);
        let state = sim.state();
        for i in 0..state.n_queries() {
            let best = trace.final_hints[i];
            prop_assert!(sim.truth().get(i, best) <= sim.truth().get(i, 0));
        }
    }

    #[test]
    fn guard_never_exceeds_cap(default in 0.0f64..100.0, candidate in 0.0f64..100.0, headroom in 0.0f64..100.0, cap in 0.0f64..100.0) {
        let (seconds, adopted) = guarded_latency(default, candidate, headroom, cap);
        prop_assert!(seconds <= default + headroom.min(cap));
        prop_assert!(seconds <= default + cap);
        if adopted {
            prop_assert!(candidate < headroom.min(cap));
        }
    }
}

#[test]
fn full_budget_reaches_optimum() {
    for seed in 0..4 {
        let truth = synth::generate(&SynthConfig {
            n_queries: 20,
            n_hints: 6,
            rank: 2,
            noise: 0.05,
            seed,
            ..Default::default()
        })
        .unwrap();
        for kind in [PolicyKind::Random, PolicyKind::Greedy, PolicyKind::LimeQo] {
            let cfg = SimConfig::new(kind, truth.total_mass());
            let mut sim = Simulation::new(truth.clone(), 0, cfg, seed).unwrap();
            sim.run(&[]).unwrap();
            let p = sim.state().workload_latency().unwrap();
            let opt = truth.optimal_latency();
            assert!(
                (p - opt).abs() <= 1e-9 * opt,
                "{kind} seed {seed}: {p} vs {opt}"
            );
        }
    }
}
