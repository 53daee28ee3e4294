//! Exhaustive command-sequence search: no scenario can be compromised faster than
//! its designed chain.

use breachseek_core::batch::{search_sequences, Strategy};
use breachseek_core::bundled::{load_scenario, scenario_names};

#[test]
fn no_sequence_shorter_than_the_chain_reaches_root() {
    for name in scenario_names() {
        let scenario = load_scenario(name).unwrap();
        let alphabet = scenario.example_commands();
        let chain = scenario.chain.len();
        for len in 1..chain {
            let report = search_sequences(&scenario, &alphabet, len, Strategy::Parallel);
            assert_eq!(report.root_count, 0, "{name}: length {len} reached root");
        }
        let report = search_sequences(&scenario, &alphabet, chain, Strategy::Parallel);
        let designed: Vec<usize> = (0..chain).collect();
        assert_eq!(report.shortest_root, Some(designed.clone()), "{name}");
        // at exactly chain length, root requires each command to satisfy its step in order
        let in_order: u64 = scenario
            .chain
            .iter()
            .map(|step| alphabet.iter().filter(|c| step.pattern.is_match(c)).count() as u64)
            .product();
        assert_eq!(report.root_count, in_order, "{name}");
    }
}

#[test]
fn sequential_and_parallel_search_agree() {
    let scenario = load_scenario("distcc-privesc").unwrap();
    let alphabet = scenario.example_commands();
    assert_eq!(
        search_sequences(&scenario, &alphabet, 3, Strategy::Sequential),
        search_sequences(&scenario, &alphabet, 3, Strategy::Parallel)
    );
}

#[test]
fn flag_is_only_readable_as_root() {
    let scenario = load_scenario("vsftpd-backdoor").unwrap();
    let mut target = breachseek_core::sim::TargetState::new(scenario.clone());
    let out = target.handle_command("cat /root/flag.txt");
    assert_ne!(out.exit_code, 0);
    assert!(!out.stdout.contains(&scenario.file.flag));
    for step in &scenario.chain {
        let out = target.handle_command(&step.spec.example);
        assert_eq!(out.exit_code, 0);
        assert!(!out.stdout.contains(&scenario.file.flag));
    }
    assert!(target.is_compromised());
    let out = target.handle_command("cat /root/flag.txt");
    assert_eq!(out.stdout.trim(), scenario.file.flag);
    assert!(target.flag_read());
}
