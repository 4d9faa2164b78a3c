use isdc::extract::{
    enumerate_candidates, expand_to_cone, expand_to_path, merge_to_windows, rank, Subgraph,
    DEFAULT_WINDOW_CAP,
};
use isdc::generate::{generate_layered_graph, OpDistribution};
use isdc::{parse_graph, run_sdc, Graph, RankStrategy, Schedule};
use isdc_testkit::check_cone_properties;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn operand_lists(g: &Graph) -> Vec<Vec<usize>> {
    g.ids()
        .map(|v| g.operands(v).iter().map(|p| p.0).collect())
        .collect()
}

fn check(g: &Graph, s: &Schedule, sg: &Subgraph) {
    let idx = |set: &std::collections::BTreeSet<isdc::NodeId>| {
        set.iter().map(|v| v.0).collect::<Vec<_>>()
    };
    check_cone_properties(
        &operand_lists(g),
        &idx(&sg.nodes),
        &idx(&sg.leaves),
        &idx(&sg.roots),
    )
    .unwrap_or_else(|e| panic!("{}: {e}", g.name()));
    let stage = s.stage(*sg.roots.iter().next().unwrap());
    assert!(sg.nodes.iter().all(|&v| s.stage(v) == stage));
}

fn cones_and_windows(g: &Graph, cap: usize) -> (Schedule, Vec<Subgraph>, Vec<Subgraph>) {
    let (s, m) = run_sdc(g).unwrap();
    let cones: Vec<Subgraph> = enumerate_candidates(g, &s, &m)
        .iter()
        .map(|c| expand_to_cone(c, g, &s))
        .collect();
    let mut windows = Vec::new();
    for stage in 0..s.num_stages() {
        let group: Vec<Subgraph> = cones
            .iter()
            .filter(|c| s.stage(*c.roots.iter().next().unwrap()) == stage)
            .cloned()
            .collect();
        windows.extend(merge_to_windows(&group, g, cap));
    }
    (s, cones, windows)
}

#[test]
fn cones_and_windows_are_well_formed() {
    let dist = OpDistribution::default();
    for seed in 0..60 {
        let g = generate_layered_graph(seed, 6, 5, &dist);
        let (s, cones, windows) =
            cones_and_windows(&g, if seed % 2 == 0 { DEFAULT_WINDOW_CAP } else { 6 });
        assert!(!cones.is_empty());
        for sg in cones.iter().chain(&windows) {
            check(&g, &s, sg);
        }
        // Every cone root lands in exactly one window.
        for c in &cones {
            let r = c.roots.iter().next().unwrap();
            assert_eq!(windows.iter().filter(|w| w.roots.contains(r)).count(), 1);
        }
    }
}

#[test]
fn paths_are_chains_between_endpoints() {
    let dist = OpDistribution::default();
    for seed in 0..20 {
        let g = generate_layered_graph(seed, 6, 5, &dist);
        let (s, m) = run_sdc(&g).unwrap();
        for c in enumerate_candidates(&g, &s, &m) {
            let p = expand_to_path(&c, &g, &m);
            let total: u64 = p.nodes.iter().map(|&v| g.delay(v)).sum();
            assert_eq!(total as i64, c.ccp_delay_ps);
            assert!(p.nodes.contains(&c.src) && p.nodes.contains(&c.dst));
            assert!(p.nodes.iter().all(|&v| s.stage(v) == s.stage(c.dst)));
        }
    }
}

#[test]
fn fig3_strategies_disagree() {
    let g = parse_graph(include_str!("../../../fixtures/fig3.json")).unwrap();
    let (s, m) = run_sdc(&g).unwrap();
    let cands = enumerate_candidates(&g, &s, &m);
    let summary: Vec<(&str, i64)> = cands
        .iter()
        .map(|c| (g.name_of(c.dst), c.ccp_delay_ps))
        .collect();
    assert_eq!(summary, [("v3", 10_000), ("v4", 9_000)]);
    let first = |strategy| {
        g.name_of(rank(&g, cands.clone(), strategy)[0].dst)
            .to_string()
    };
    assert_eq!(first(RankStrategy::DelayDriven), "v3");
    assert_eq!(first(RankStrategy::FanoutDriven), "v4");
}

proptest! {
    #[test]
    fn ranking_ignores_input_order(seed in 0u64..500, shuffle in any::<u64>()) {
        let g = generate_layered_graph(seed, 5, 6, &OpDistribution::default());
        let (s, m) = run_sdc(&g).unwrap();
        let cands = enumerate_candidates(&g, &s, &m);
        let mut shuffled = cands.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        for strategy in [RankStrategy::DelayDriven, RankStrategy::FanoutDriven] {
            prop_assert_eq!(rank(&g, cands.clone(), strategy), rank(&g, shuffled.clone(), strategy));
        }
        let by_delay = rank(&g, cands.clone(), RankStrategy::DelayDriven);
        prop_assert!(by_delay.windows(2).all(|w| w[0].ccp_delay_ps >= w[1].ccp_delay_ps));
        let by_score = rank(&g, cands, RankStrategy::FanoutDriven);
        prop_assert!(by_score.windows(2).all(|w| w[0].score >= w[1].score));
    }
}
