mod common;

use std::process::Command;
use std::time::Duration;

use common::*;
use polylock::attack::smt::{self, modeled_outputs, solver_outputs};
use polylock::attack::{
    attack_loop, export_smtlib, find_dip, AttackConfig, AttackError, AttackStatus, Backend,
    Constraint, EnumerativeSearch, SolverCommand,
};
use polylock::bind::synthesize;
use polylock::dfg::{Dfg, OpType};
use polylock::fixtures::{single_op, small_locked, toy_locked};
use polylock::lock::{insert_sbs, lock_at_sites, LockConfig, LockedDesign};
use polylock::polysb::{Behavior, CorruptionPolicy, DesignKey, SbKey, SbMode};
use polylock::sim::{
    all_inputs, error_rate, error_rate_exhaustive, evaluate_dfg, simulate, simulate_netlist,
    SimError, SimInput, Simulator,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn z3() -> Option<SolverCommand> {
    let ok = Command::new("z3")
        .arg("-version")
        .output()
        .is_ok_and(|o| o.status.success());
    if !ok {
        eprintln!("z3 not found on PATH; solver checks skipped");
    }
    ok.then(|| SolverCommand::parse("z3 -smt2").unwrap())
}

fn cross_key() -> SbKey {
    SbMode::Cross.keys()[0]
}

fn locked_random(seed: u64, nodes: usize, sbs: usize, width: u32) -> (Dfg, LockedDesign) {
    let g = random_dfg(seed, nodes, 4);
    let syn = synthesize(&g, g.critical_path_len() + 1, width).unwrap();
    let config = LockConfig {
        budget_pct: 1000.0,
        seed,
        max_sbs: Some(sbs),
        ..LockConfig::default()
    };
    (g, insert_sbs(&syn.netlist, &config).unwrap())
}

fn golden_oracle(d: &LockedDesign) -> impl Fn(&SimInput) -> polylock::sim::SimResult {
    let sim = Simulator::for_design(d).unwrap();
    let golden = d.golden.clone().unwrap();
    move |i| sim.run_key(&golden, i).unwrap()
}

/// Whether `key` matches the golden key on every input.
fn equivalent_everywhere(d: &LockedDesign, key: &DesignKey) -> bool {
    let sim = Simulator::for_design(d).unwrap();
    let golden = d.golden.clone().unwrap();
    all_inputs(sim.input_count(), sim.width())
        .iter()
        .all(|i| sim.run_key(key, i).unwrap() == sim.run_key(&golden, i).unwrap())
}

#[test]
fn bare_adder_adds() {
    let syn = synthesize(&single_op(OpType::Add), 1, 8).unwrap();
    assert_eq!(
        simulate_netlist(&syn.netlist, &SimInput(vec![3, 4]))
            .unwrap()
            .outputs,
        vec![7]
    );
}

#[test]
fn wrong_cross_key_swaps_subtraction_operands() {
    for width in [4, 8, 16] {
        let d = toy_locked(OpType::Sub, SbMode::Parallel, width, 1);
        let out = simulate(
            &d,
            Some(&DesignKey(vec![cross_key()])),
            &SimInput(vec![9, 5]),
        )
        .unwrap();
        let mask = (1u64 << width) - 1;
        assert_eq!(out.outputs, vec![5u64.wrapping_sub(9) & mask]);
        let good = simulate(&d, d.golden.as_ref(), &SimInput(vec![9, 5])).unwrap();
        assert_eq!(good.outputs, vec![4]);
    }
}

#[test]
fn cross_mode_toy_with_parallel_key_swaps_too() {
    let d = toy_locked(OpType::Sub, SbMode::Cross, 8, 1);
    let key = DesignKey(vec![SbMode::Parallel.keys()[3]]);
    assert_eq!(
        simulate(&d, Some(&key), &SimInput(vec![9, 5]))
            .unwrap()
            .outputs,
        vec![252]
    );
}

#[test]
fn key_length_is_checked() {
    let d = toy_locked(OpType::Sub, SbMode::Parallel, 8, 1);
    let err = simulate(&d, Some(&DesignKey(vec![])), &SimInput(vec![1, 2])).unwrap_err();
    assert!(matches!(err, SimError::KeyLength { .. }), "{err:?}");
    assert!(simulate(&d, None, &SimInput(vec![1])).is_err());
}

#[test]
fn unlocked_design_has_zero_error_rate() {
    let syn = synthesize(&single_op(OpType::Mul), 1, 8).unwrap();
    let d = insert_sbs(&syn.netlist, &LockConfig::default()).unwrap();
    let r = error_rate(&d, 100, 0).unwrap();
    assert_eq!(r.error_rate, 0.0);
    assert!(r.warning.is_some());
}

#[test]
fn exhaustive_rate_matches_full_key_enumeration() {
    let mut designs = vec![
        toy_locked(OpType::Sub, SbMode::Parallel, 2, 4),
        toy_locked(OpType::Add, SbMode::Cross, 2, 4),
        toy_locked(OpType::Mul, SbMode::Parallel, 2, 4),
    ];
    designs.push(small_locked(7, 2, 2));
    for d in designs {
        let sim = Simulator::for_design(&d).unwrap();
        let golden = d.golden.clone().unwrap();
        let inputs = all_inputs(sim.input_count(), 2);
        let good: Vec<_> = inputs
            .iter()
            .map(|i| sim.run_key(&golden, i).unwrap())
            .collect();
        let modes = d.modes().unwrap();
        let x = d.sb_count();
        let (mut errors, mut trials) = (0u64, 0u64);
        for raw in 0..256usize.pow(x as u32) {
            let key = DesignKey(
                (0..x)
                    .map(|b| SbKey((raw >> (8 * (x - 1 - b))) as u8))
                    .collect(),
            );
            if key
                .0
                .iter()
                .zip(&modes)
                .all(|(&k, m)| Behavior::of(k) == m.behavior())
            {
                continue;
            }
            for (i, g) in inputs.iter().zip(&good) {
                trials += 1;
                errors += (sim.run_key(&key, i).unwrap() != *g) as u64;
            }
        }
        let r = error_rate_exhaustive(&d).unwrap();
        assert_eq!((r.errors, r.trials), (errors, trials));
    }
}

#[test]
fn error_rate_is_reproducible_and_bounded() {
    let (_, d) = locked_random(11, 16, 3, 8);
    let a = error_rate(&d, 500, 9).unwrap();
    let b = error_rate(&d, 500, 9).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a.error_rate));
    assert_eq!(a.error_rate, a.errors as f64 / a.trials as f64);
}

#[test]
fn strict_policy_exposes_floating_outputs() {
    let d = LockedDesign {
        policy: CorruptionPolicy::Strict3V,
        ..toy_locked(OpType::Add, SbMode::Parallel, 8, 0)
    };
    let floating = SbKey(0b0101_0101);
    assert_eq!(Behavior::of(floating).z, Default::default());
    let r = simulate(&d, Some(&DesignKey(vec![floating])), &SimInput(vec![1, 2])).unwrap();
    assert!(!r.is_fully_known());
    let wired = toy_locked(OpType::Add, SbMode::Parallel, 8, 0);
    assert!(simulate(
        &wired,
        Some(&DesignKey(vec![floating])),
        &SimInput(vec![1, 2])
    )
    .unwrap()
    .is_fully_known());
}

#[test]
fn no_boxes_means_no_dip_and_immediate_key() {
    let syn = synthesize(&single_op(OpType::Add), 1, 4).unwrap();
    let d = insert_sbs(
        &syn.netlist,
        &LockConfig {
            budget_pct: 0.0,
            ..LockConfig::default()
        },
    )
    .unwrap();
    assert!(find_dip(&d, &[], &AttackConfig::default())
        .unwrap()
        .is_none());
    let r = attack_loop(
        &d.foundry_view(),
        &golden_oracle(&d),
        &AttackConfig::default(),
    )
    .unwrap();
    assert_eq!(r.status, AttackStatus::KeyFound);
    assert_eq!(r.key, Some(DesignKey::default()));
    assert_eq!(r.iterations, 0);
}

#[test]
fn fresh_toy_has_a_dip_until_the_mode_is_pinned() {
    let d = toy_locked(OpType::Sub, SbMode::Parallel, 4, 2);
    let view = d.foundry_view();
    let oracle = golden_oracle(&d);
    let sim = Simulator::for_design(&d).unwrap();
    let cfg = AttackConfig::default();

    let dip = find_dip(&view, &[], &cfg)
        .unwrap()
        .expect("golden and corrupt keys disagree");
    assert_ne!(
        sim.run_key(&dip.k1, &dip.input).unwrap(),
        sim.run_key(&dip.k2, &dip.input).unwrap()
    );

    let mut constraints = Vec::new();
    while let Some(dip) = find_dip(&view, &constraints, &cfg).unwrap() {
        constraints.push(Constraint {
            output: oracle(&dip.input),
            input: dip.input,
        });
        assert!(constraints.len() <= 16);
    }
    let mut search = EnumerativeSearch::new(&view, 2, 0).unwrap();
    for c in &constraints {
        search.add_constraint(c).unwrap();
    }
    assert!(search.is_exhaustive());
    assert_eq!(search.consistent_count(), 1);
    assert_eq!(search.consistent_keys(), 16);
    let key = search.any_consistent_key().unwrap();
    assert_eq!(Behavior::of(key.0[0]), Behavior::PARALLEL);
}

#[test]
fn toy_attack_recovers_the_golden_class() {
    for mode in [SbMode::Parallel, SbMode::Cross] {
        let d = toy_locked(OpType::Sub, mode, 4, 5);
        let r = attack_loop(
            &d.foundry_view(),
            &golden_oracle(&d),
            &AttackConfig::default(),
        )
        .unwrap();
        assert_eq!(r.status, AttackStatus::KeyFound);
        let key = r.key.unwrap();
        assert_eq!(Behavior::of(key.0[0]), mode.behavior());
        assert!(equivalent_everywhere(&d, &key));
        assert_eq!(r.dips, r.iterations - 1);
    }
}

#[test]
fn consistent_count_strictly_decreases_and_key_is_sound() {
    for seed in 0..4 {
        let d = small_locked(seed, 2, 4);
        let view = d.foundry_view();
        let oracle = golden_oracle(&d);
        let mut search = EnumerativeSearch::new(&view, 2, 0).unwrap();
        let mut queried = Vec::new();
        while let Some(dip) = search.find_dip().unwrap() {
            let before = search.consistent_count();
            let c = Constraint {
                output: oracle(&dip.input),
                input: dip.input,
            };
            search.add_constraint(&c).unwrap();
            assert!(search.consistent_count() < before);
            queried.push(c);
        }
        let key = search.any_consistent_key().unwrap();
        let sim = Simulator::for_design(&d).unwrap();
        for c in &queried {
            assert_eq!(sim.run_key(&key, &c.input).unwrap(), c.output);
        }
        assert!(equivalent_everywhere(&d, &key));
    }
}

#[test]
fn budgets_and_capacity_end_in_timeout() {
    let d = small_locked(3, 3, 4);
    let r = attack_loop(
        &d.foundry_view(),
        &golden_oracle(&d),
        &AttackConfig::default(),
    )
    .unwrap();
    assert_eq!(r.status, AttackStatus::Timeout);
    assert!(r.reason.unwrap().contains("capacity"));
    assert!(matches!(
        EnumerativeSearch::new(&d, 2, 0),
        Err(AttackError::Capacity {
            sbs: 3,
            capacity: 2
        })
    ));

    let d = small_locked(3, 2, 4);
    let cfg = AttackConfig {
        max_iters: 1,
        ..AttackConfig::default()
    };
    let r = attack_loop(&d.foundry_view(), &golden_oracle(&d), &cfg).unwrap();
    assert_eq!(r.status, AttackStatus::Timeout);
    assert_eq!(r.iterations, 1);

    let cfg = AttackConfig {
        timeout: Duration::ZERO,
        ..AttackConfig::default()
    };
    let r = attack_loop(&d.foundry_view(), &golden_oracle(&d), &cfg).unwrap();
    assert_eq!(r.status, AttackStatus::Timeout);
}

#[test]
fn report_json_has_contract_fields() {
    let d = toy_locked(OpType::Sub, SbMode::Parallel, 4, 5);
    let r = attack_loop(
        &d.foundry_view(),
        &golden_oracle(&d),
        &AttackConfig::default(),
    )
    .unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    for f in ["status", "key", "dips", "iterations", "wall_s"] {
        assert!(v.get(f).is_some(), "{f}");
    }
    assert_eq!(v["status"], "KeyFound");
    assert_eq!(v["key"].as_str().unwrap().len(), 8);
}

#[test]
fn smtlib_export_shape() {
    let d = toy_locked(OpType::Sub, SbMode::Parallel, 4, 5);
    let text = export_smtlib(&d.foundry_view(), &[]).unwrap();
    assert!(text.contains("(set-logic QF_BV)"));
    assert!(text.contains("(check-sat)"));
    assert!(text.contains("(_ BitVec 4)"));
    assert!(text.contains("(_ BitVec 8)"));

    let strict = LockedDesign {
        policy: CorruptionPolicy::Strict3V,
        ..d
    };
    assert!(matches!(
        export_smtlib(&strict, &[]),
        Err(AttackError::Policy(_))
    ));
}

#[test]
fn unlocked_miter_is_unsatisfiable() {
    let Some(z3) = z3() else { return };
    let syn = synthesize(&single_op(OpType::Add), 1, 8).unwrap();
    let config = LockConfig {
        budget_pct: 0.0,
        ..LockConfig::default()
    };
    let d = lock_at_sites(&syn.netlist, vec![], vec![], &config).unwrap();
    assert!(smt::find_dip(&d, &[], &z3).unwrap().is_none());
    let text = export_smtlib(&d, &[]).unwrap();
    assert_eq!(z3.solve(&text).unwrap(), None);
}

#[test]
fn solver_dips_replay_through_the_simulator() {
    let Some(z3) = z3() else { return };
    let mut calls = 0;
    let mut seed = 0;
    while calls < 20 {
        let d = if seed % 2 == 0 {
            toy_locked(OpType::Sub, SbMode::Parallel, 4, seed)
        } else {
            small_locked(seed, 2, 4)
        };
        seed += 1;
        let view = d.foundry_view();
        let sim = Simulator::for_design(&d).unwrap();
        let oracle = golden_oracle(&d);
        let mut constraints: Vec<Constraint> = Vec::new();
        while let Some(dip) = smt::find_dip(&view, &constraints, &z3).unwrap() {
            calls += 1;
            let r1 = sim.run_key(&dip.k1, &dip.input).unwrap();
            let r2 = sim.run_key(&dip.k2, &dip.input).unwrap();
            assert_ne!(r1, r2, "replayed DIP does not distinguish its keys");
            for c in &constraints {
                assert_eq!(sim.run_key(&dip.k1, &c.input).unwrap(), c.output);
                assert_eq!(sim.run_key(&dip.k2, &c.input).unwrap(), c.output);
            }
            constraints.push(Constraint {
                output: oracle(&dip.input),
                input: dip.input,
            });
            assert!(constraints.len() < 64);
        }
    }
}

#[test]
fn solver_attack_recovers_an_equivalent_key() {
    let Some(z3) = z3() else { return };
    for seed in 0..3 {
        let d = small_locked(seed, 2, 4);
        let cfg = AttackConfig {
            backend: Backend::Smt(z3.clone()),
            ..AttackConfig::default()
        };
        let r = attack_loop(&d.foundry_view(), &golden_oracle(&d), &cfg).unwrap();
        assert_eq!(r.status, AttackStatus::KeyFound);
        assert!(equivalent_everywhere(&d, &r.key.unwrap()));
    }
}

#[test]
fn solver_reads_back_the_encoded_outputs() {
    let Some(z3) = z3() else { return };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..8 {
        let (_, d) = locked_random(seed, 10, 3, 8);
        let sim = Simulator::for_design(&d).unwrap();
        let key = DesignKey((0..d.sb_count()).map(|_| SbKey(rng.gen())).collect());
        let input = SimInput::random(&mut rng, sim.input_count(), 8);
        assert_eq!(
            solver_outputs(&d, &key, &input, &z3).unwrap(),
            sim.run_key(&key, &input).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wired_or_outputs_are_always_known(seed in any::<u64>(), raw in proptest::collection::vec(any::<u8>(), 3)) {
        let (g, d) = locked_random(seed, 12, 3, 8);
        let key = DesignKey(raw.into_iter().take(d.sb_count()).map(SbKey).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = SimInput::random(&mut rng, g.inputs().len(), 8);
        let r = simulate(&d, Some(&key), &input).unwrap();
        prop_assert!(r.is_fully_known());
        prop_assert_eq!(simulate(&d, Some(&key), &input).unwrap(), r);
    }

    #[test]
    fn golden_simulation_matches_graph(seed in any::<u64>(), width in 1u32..=12) {
        let (g, d) = locked_random(seed, 12, 3, width);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let input = SimInput::random(&mut rng, g.inputs().len(), width);
            let want = interpret(&g, &input.0, width);
            prop_assert_eq!(&evaluate_dfg(&g, &input, width), &want);
            prop_assert_eq!(&simulate(&d, d.golden.as_ref(), &input).unwrap().outputs, &want);
        }
    }

    #[test]
    fn encoding_agrees_with_simulation(seed in any::<u64>(), width in 1u32..=10) {
        let (_, d) = locked_random(seed, 12, 3, width);
        let sim = Simulator::for_design(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let key = DesignKey((0..d.sb_count()).map(|_| SbKey(rng.gen())).collect());
            let input = SimInput::random(&mut rng, sim.input_count(), width);
            prop_assert_eq!(modeled_outputs(&d, &key, &input).unwrap(), sim.run_key(&key, &input).unwrap());
        }
    }
}

#[test]
fn missing_solver_falls_back_to_enumeration() {
    let d = toy_locked(OpType::Sub, SbMode::Cross, 4, 3);
    let sim = Simulator::for_design(&d).unwrap();
    let golden = d.golden.clone().unwrap();
    let oracle = |i: &SimInput| sim.run_key(&golden, i).unwrap();
    let cmd = SolverCommand::parse("/nonexistent/solver -smt2").unwrap();
    assert!(!cmd.is_available());
    let cfg = AttackConfig {
        backend: Backend::Smt(cmd),
        ..AttackConfig::default()
    };
    let r = attack_loop(&d.foundry_view(), &oracle, &cfg).unwrap();
    assert_eq!(r.status, AttackStatus::KeyFound);
    assert!(r.reason.unwrap().contains("enumerative"));
}
