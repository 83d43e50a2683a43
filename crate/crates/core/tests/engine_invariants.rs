use std::cell::RefCell;

use dybw::config::ExperimentConfig;
use dybw::engine::{consensus_update, Simulation, StepTrace};
use dybw::learning::{global_loss, minibatch_gradient, synth_classification, LearningRateSchedule, ParamVector, Shard};
use dybw::rng::batch_stream;
use dybw::scheduler::StrategyConfig;
use dybw::straggler::{DelayKind, DelayModel};
use dybw::topology::{generate_graph, GraphKind};

fn default_sim(seed: u64) -> Simulation {
    let mut cfg = ExperimentConfig::default_synthetic();
    cfg.k = 120;
    cfg.eta = LearningRateSchedule::constant(0.3);
    Simulation::from_config(&cfg, seed).unwrap()
}

#[test]
fn mixing_preserves_the_mean() {
    for strategy in [StrategyConfig::Full, StrategyConfig::Dtur] {
        let sim = default_sim(3).with_strategy(strategy).unwrap();
        let worst = RefCell::new(0.0f64);
        let mut obs = |s: &StepTrace<'_>| {
            let before = ParamVector::mean(s.tilde);
            let after = ParamVector::mean(s.params);
            let d = before
                .0
                .iter()
                .zip(&after.0)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let mut w = worst.borrow_mut();
            *w = w.max(d);
        };
        sim.run_observed(&mut obs).unwrap();
        assert!(*worst.borrow() <= 1e-12, "{}", worst.borrow());
    }
}

#[test]
fn stacked_product_matches_per_worker_sums() {
    let sim = default_sim(5);
    let mut worst = 0.0f64;
    let mut obs = |s: &StepTrace<'_>| {
        // W = P W~ with one row per worker
        let p = s.matrix.entries();
        let n = p.n();
        let product = |j: usize, f: usize| (0..n).map(|i| p.get(j, i) * s.tilde[i].0[f]).sum::<f64>();
        let per_worker = consensus_update(s.tilde, s.matrix).unwrap();
        for (j, w) in per_worker.iter().enumerate() {
            assert_eq!(w, &s.params[j]);
            for (f, x) in w.0.iter().enumerate() {
                worst = worst.max((x - product(j, f)).abs());
            }
        }
    };
    sim.run_observed(&mut obs).unwrap();
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn complete_graph_with_identical_shards_is_pooled_sgd() {
    let n = 4;
    let train = synth_classification(80, 4, 3, 1).unwrap();
    let g = generate_graph(n, GraphKind::Complete, 0).unwrap();
    let shards: Vec<Shard> = (0..n)
        .map(|j| Shard::new(j, train.all_indices(), train.len()).unwrap())
        .collect();
    let delay = DelayModel::new(
        DelayKind::FixedHeterogeneous {
            means: vec![1.0; n],
            jitter: 0.0,
        },
        9,
    )
    .unwrap();
    let mut sim = Simulation::new(g, train.clone(), None, shards.clone(), StrategyConfig::Full, delay, 9).unwrap();
    sim.k = 40;
    sim.batch = 5;
    sim.eta = LearningRateSchedule::geometric(0.5, 0.97);
    let result = sim.run().unwrap();

    // every worker holds the pooled data; one step uses the union of their batches
    let mut w = ParamVector::zeros(train.param_len());
    for (k, record) in (1..=sim.k).zip(&result.records) {
        let mut g = vec![0.0; w.len()];
        for shard in &shards {
            let mut rng = batch_stream(9, shard.owner(), k);
            let gj = minibatch_gradient(&train, shard, &w, sim.batch, &mut rng).unwrap();
            for (a, b) in g.iter_mut().zip(gj) {
                *a += b / n as f64;
            }
        }
        w = w.step(sim.eta.eta_at(k), &g);
        let expect = global_loss(&train, &shards, &w).unwrap();
        assert!((record.global_loss - expect).abs() <= 1e-12, "k = {k}");
    }
    for wj in &result.final_params {
        assert!(wj.distance(&w) <= 1e-12);
    }
}

#[test]
fn smoothed_loss_never_increases() {
    const WINDOW: usize = 20;
    for applies_local in [false, true] {
        for seed in 0..5 {
            let mut cfg = ExperimentConfig::default_synthetic();
            cfg.straggler_applies_local = applies_local;
            let r = Simulation::from_config(&cfg, seed).unwrap().run().unwrap();
            let losses: Vec<f64> = r.records.iter().map(|x| x.global_loss).collect();
            let smooth: Vec<f64> = losses
                .windows(WINDOW)
                .map(|w| w.iter().sum::<f64>() / WINDOW as f64)
                .collect();
            for (i, pair) in smooth.windows(2).enumerate() {
                assert!(
                    pair[1] <= pair[0] + 1e-12,
                    "seed {seed}, window ending at k = {}: {} > {}",
                    i + WINDOW + 1,
                    pair[1],
                    pair[0]
                );
            }
        }
    }
}

#[test]
fn dtur_is_faster_than_full_on_the_same_draws() {
    let mut cfg = ExperimentConfig::default_synthetic();
    cfg.k = 300;
    let sim = Simulation::from_config(&cfg, 42).unwrap();
    let dtur = sim.with_strategy(StrategyConfig::Dtur).unwrap().run().unwrap();
    let full = sim.with_strategy(StrategyConfig::Full).unwrap().run().unwrap();
    assert!(dtur.mean_duration().unwrap() < full.mean_duration().unwrap());
    for (a, b) in dtur.records.iter().zip(&full.records) {
        assert!(a.duration <= b.duration);
    }
}
