//! Runtime invariants over generated models and fault sets.

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use txforge_core::ledger::Ledger;
use txforge_core::runtime::{Engine, JournalEvent, Mode};
use txforge_core::testkit::fixtures::harvester_bundle;
use txforge_core::testkit::fuzz::run_checking_atomicity;
use txforge_core::testkit::gen::{random_faults, random_model};

/// Step to the end, escalating nothing; returns the engine.
fn run_plain(
    bundle: txforge_core::compiler::DeploymentBundle,
    faults: Vec<txforge_core::scenario::FaultSpec>,
) -> Engine {
    let mut e = Engine::start(bundle).unwrap();
    for f in faults {
        e.add_fault(f).unwrap();
    }
    e.run().unwrap();
    e
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn aborts_leave_the_ledger_as_it_was_at_begin(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let m = random_model(&mut rng, 8);
        let faults = random_faults(&mut rng, &m, 2);
        let report = run_checking_atomicity(m.bundle(), faults);
        prop_assert!(report.violations.is_empty(), "{:?}", report.violations);
    }

    #[test]
    fn fault_free_generated_models_succeed(seed in any::<u64>()) {
        let m = random_model(&mut StdRng::seed_from_u64(seed), 8);
        let e = run_plain(m.bundle(), Vec::new());
        prop_assert_eq!(e.mode(), &Mode::Done { outcome: txforge_core::runtime::Outcome::Success });
        // Every task ran at most once and every exclusive choice was logged.
        prop_assert!(e.metrics().task_attempts.values().all(|&n| n == 1));
    }

    #[test]
    fn journal_and_ledger_are_well_formed(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let m = random_model(&mut rng, 8);
        let faults = random_faults(&mut rng, &m, 2);
        let e = run_plain(m.bundle(), faults);
        prop_assert!(e.journal().is_well_formed());
        let rebuilt = Ledger::from_parts(e.ledger().blocks().to_vec(), e.ledger().event_log().to_vec()).unwrap();
        prop_assert_eq!(rebuilt.state(), e.ledger().state());
        prop_assert_eq!(&e.ledger().recompute_state(), e.ledger().state());
    }

    #[test]
    fn two_phase_commit_sends_n_squared_plus_2n(seed in any::<u64>()) {
        let m = random_model(&mut StdRng::seed_from_u64(seed), 8);
        let e = run_plain(m.bundle(), Vec::new());
        for (tx, sent) in &e.metrics().messages2pc {
            let ctx = e.tx(tx).unwrap();
            let n = ctx.participants.len() as u64;
            prop_assert_eq!(*sent, n * n + 2 * n);
        }
    }

    #[test]
    fn sessions_are_deterministic(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let m = random_model(&mut rng, 8);
        let faults = random_faults(&mut rng, &m, 2);
        let a = run_plain(m.bundle(), faults.clone());
        let b = run_plain(m.bundle(), faults);
        prop_assert_eq!(a.journal().dump(), b.journal().dump());
        prop_assert_eq!(a.ledger().dump(), b.ledger().dump());
    }

    #[test]
    fn checkpoint_restore_is_transparent(seed in any::<u64>(), every in 1usize..7) {
        let mut rng = StdRng::seed_from_u64(seed);
        let m = random_model(&mut rng, 8);
        let faults = random_faults(&mut rng, &m, 2);
        let reference = run_plain(m.bundle(), faults.clone());

        let mut e = Engine::start(m.bundle()).unwrap();
        for f in faults {
            e.add_fault(f).unwrap();
        }
        let mut steps = 0;
        while *e.mode() == Mode::Running {
            e.step().unwrap();
            steps += 1;
            if steps % every == 0 {
                e = Engine::restore(&e.checkpoint()).unwrap();
            }
        }
        prop_assert_eq!(e.journal().dump(), reference.journal().dump());
        prop_assert_eq!(e.ledger().dump(), reference.ledger().dump());
    }
}

#[test]
fn committed_tops_appear_in_the_ledger_in_commit_order() {
    let mut e = Engine::start(harvester_bundle(false)).unwrap();
    e.run().unwrap();
    let committed: Vec<String> = e
        .journal()
        .entries()
        .iter()
        .filter_map(|x| match &x.event {
            JournalEvent::TxCommitted { tx, block: Some(_), .. } => Some(tx.clone()),
            _ => None,
        })
        .collect();
    let blocks: Vec<String> = e.ledger().blocks().iter().map(|b| b.tx_id.clone()).collect();
    assert_eq!(committed, blocks);
}

#[test]
fn generated_fault_sets_do_exercise_aborts() {
    let mut rng = StdRng::seed_from_u64(7);
    let mut aborts = 0;
    let mut parked = 0;
    for _ in 0..40 {
        let m = random_model(&mut rng, 8);
        let faults = random_faults(&mut rng, &m, 2);
        let r = run_checking_atomicity(m.bundle(), faults);
        assert!(r.violations.is_empty());
        aborts += r.aborts_checked;
        parked += usize::from(!matches!(r.final_mode, Some(Mode::Done { .. })));
    }
    assert!(aborts >= 10, "only {aborts} aborts");
    assert!(parked > 0);
}
