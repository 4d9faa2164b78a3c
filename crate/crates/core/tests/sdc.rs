use isdc::delay::DelayMatrix;
use isdc::sdc::{build_constraints, register_cost, solve, RegisterObjective, Var};
use isdc::{parse_graph, run_sdc, EngineError, Graph};
use isdc_testkit::{min_register_bits, Dag};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stages_by_index(g: &Graph, dag: &Dag, s: &isdc::Schedule) -> Vec<i64> {
    (0..dag.len())
        .map(|i| s.stage(g.lookup(&Dag::name(i)).unwrap()) as i64)
        .collect()
}

#[test]
fn matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut infeasible = 0;
    for _ in 0..150 {
        let dag = Dag::random(&mut rng, 9, 1500, 1000);
        let g = parse_graph(&dag.to_json()).unwrap();
        match (run_sdc(&g), min_register_bits(&dag)) {
            (Ok((s, _)), Some(best)) => {
                assert_eq!(s.register_bits(), best, "{}", dag.to_json());
                let stages = stages_by_index(&g, &dag, &s);
                assert_eq!(isdc_testkit::register_bits(&dag, &stages), best);
                assert_eq!(stages.iter().min(), Some(&0));
            }
            (Err(EngineError::Infeasible { .. }), None) => infeasible += 1,
            (got, want) => panic!("solver {got:?} vs brute force {want:?}"),
        }
    }
    assert!(infeasible > 0);
}

#[test]
fn solution_satisfies_every_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let dag = Dag::random(&mut rng, 12, 900, 1000);
        let g = parse_graph(&dag.to_json()).unwrap();
        let m = DelayMatrix::init(&g);
        let cs = build_constraints(&g, &m, g.clock_period_ps());
        let s = solve(&cs, &RegisterObjective::new(&g)).unwrap();
        for c in &cs {
            assert!(c.holds(|var| s.value(&g, var)), "{}", c.describe(&g));
        }
        assert_eq!(register_cost(&g, &s), s.register_bits());
        for v in g.ids() {
            assert!(s.value(&g, Var::LifetimeEnd(v)) >= s.value(&g, Var::Stage(v)));
        }
    }
}

#[test]
fn lowering_delays_never_costs_registers() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let dag = Dag::random(&mut rng, 12, 900, 1000);
        let g = parse_graph(&dag.to_json()).unwrap();
        let (s, mut m) = run_sdc(&g).unwrap();
        let ids: Vec<_> = g.ids().collect();
        for &u in &ids {
            for &v in &ids {
                let d = m.get(u, v);
                if d > 0 {
                    m.set(u, v, d * 3 / 4);
                }
            }
        }
        let relaxed = solve(
            &build_constraints(&g, &m, g.clock_period_ps()),
            &RegisterObjective::new(&g),
        )
        .unwrap();
        assert!(relaxed.register_bits() <= s.register_bits());
    }
}

#[test]
fn deterministic_tie_breaking() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..30 {
        let dag = Dag::random(&mut rng, 12, 1200, 1000);
        let g = parse_graph(&dag.to_json()).unwrap();
        if let Ok((a, _)) = run_sdc(&g) {
            let (b, _) = run_sdc(&g).unwrap();
            assert_eq!(a.to_json(&g), b.to_json(&g));
        }
    }
}

#[test]
fn fig2_needs_two_stages() {
    let g = parse_graph(include_str!("../../../fixtures/fig2.json")).unwrap();
    let (s, _) = run_sdc(&g).unwrap();
    assert_eq!(s.num_stages(), 2);
    let v2 = g.lookup("v2").unwrap();
    let v8 = g.lookup("v8").unwrap();
    assert_eq!(s.stage(v8), s.stage(v2) + 1);
}

#[test]
fn oversized_node_is_infeasible() {
    let text = r#"{"name":"big","clock_period_ps":1000,"nodes":[
        {"id":"a","op":"input","bits":8,"delay_ps":0,"operands":[]},
        {"id":"b","op":"mul","bits":8,"delay_ps":1500,"operands":["a"]}]}"#;
    let g = parse_graph(text).unwrap();
    let err = run_sdc(&g).unwrap_err();
    assert!(matches!(
        err,
        EngineError::Infeasible {
            max_node_delay_ps: 1500,
            ..
        }
    ));
    assert!(err.to_string().contains("clock period"));
}
