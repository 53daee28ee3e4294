use breachseek_core::batch::Strategy;
use breachseek_core::bundled::load_scenario;
use breachseek_core::fuzz::{fuzz_episode, fuzz_sweep, invariant_violations};
use breachseek_core::graph::canonical_hash;
use proptest::prelude::*;

#[test]
fn randomized_sweep_upholds_run_invariants() {
    for name in ["vsftpd-backdoor", "samba-usermap", "distcc-privesc"] {
        let scenario = load_scenario(name).unwrap();
        for outcome in fuzz_sweep(0..200, &scenario, Strategy::Parallel) {
            assert!(outcome.terminated, "{name} seed {} did not terminate", outcome.seed);
            let violations = invariant_violations(&outcome.state);
            assert!(violations.is_empty(), "{name} seed {}: {violations:?}", outcome.seed);
        }
    }
}

#[test]
fn sweep_is_identical_across_strategies() {
    let scenario = load_scenario("vsftpd-backdoor").unwrap();
    let hashes = |s| {
        fuzz_sweep(0..40, &scenario, s)
            .into_iter()
            .map(|o| canonical_hash(&o.state.transcript))
            .collect::<Vec<_>>()
    };
    assert_eq!(hashes(Strategy::Sequential), hashes(Strategy::Parallel));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_seed_terminates_within_limits(seed in any::<u64>()) {
        let scenario = load_scenario("vsftpd-backdoor").unwrap();
        let outcome = fuzz_episode(seed, &scenario);
        prop_assert!(outcome.terminated);
        prop_assert!(outcome.state.token_usage <= outcome.state.limits.token_budget);
        prop_assert!(outcome.state.iteration <= outcome.state.limits.max_iterations);
        prop_assert_eq!(invariant_violations(&outcome.state), Vec::<String>::new());
    }
}
