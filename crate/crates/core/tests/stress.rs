//! Long randomized soak across all engine layers; ignored by default.
//! Run with: cargo test -p mqo-core --test stress -- --ignored --nocapture

use std::collections::BTreeSet;

use mqo_core::cost_model::best_plan_given;
use mqo_core::greedy::{candidates, compute_sharability, greedy_select, GreedyOptions};
use mqo_core::oracle::{exhaustive_optimize, OracleOptions};
use mqo_core::testkit::{
    brute_force_min_cost, brute_force_sharing_degrees, check_plan_properties, count_plan_trees,
    gen_random_instance, reevaluate_plan, reference_node_costs,
};
use mqo_core::volcano::optimize_volcano;
use mqo_core::volcano_ru::volcano_ru_bidirectional;
use mqo_core::volcano_sh::volcano_sh;
use mqo_core::workload::build_dag;

#[test]
#[ignore = "long randomized soak"]
fn randomized_soak() {
    let mut brute_checked = 0;
    let mut oracle_checked = 0;
    let mut sharability_checked = 0;
    for seed in 10_000..10_300u64 {
        let inst = gen_random_instance(seed);
        let (pd, _) = build_dag(&inst.catalog_text, &inst.queries_text).unwrap();
        let info = compute_sharability(&pd.logical);
        let (plan, volcano_cost, state) = optimize_volcano(&pd).unwrap();
        check_plan_properties(&pd, &plan).unwrap();
        assert_eq!(reevaluate_plan(&pd, &plan), volcano_cost, "seed {seed}");

        // The recursive reference and the topological sweep agree exactly.
        let reference = reference_node_costs(&pd, &BTreeSet::new());
        assert_eq!(reference, state.node_cost, "seed {seed}");

        if count_plan_trees(&pd, 10_001) <= 10_000 {
            assert_eq!(
                brute_force_min_cost(&pd, 10_000).unwrap(),
                volcano_cost,
                "seed {seed}"
            );
            brute_checked += 1;
        }
        if let Some(brute) = brute_force_sharing_degrees(&pd.logical, 100_000) {
            for e in pd.logical.alive_equivs() {
                assert_eq!(
                    info.degree.get(&e.id).copied().unwrap_or(0),
                    brute.get(&e.id).copied().unwrap_or(0),
                    "seed {seed} node {}",
                    e.id
                );
            }
            sharability_checked += 1;
        }

        let sh = volcano_sh(&pd, &plan, &state).unwrap();
        assert!(sh.cost <= volcano_cost, "seed {seed}");
        check_plan_properties(&pd, &sh.plan).unwrap();
        let ru = volcano_ru_bidirectional(&pd, &state).unwrap();
        assert!(ru.cost <= volcano_cost, "seed {seed}");
        assert!(ru.cost <= sh.cost, "seed {seed}");
        check_plan_properties(&pd, &ru.plan).unwrap();

        let opts = GreedyOptions {
            validate_incremental: true,
            ..GreedyOptions::default()
        };
        let greedy = greedy_select(&pd, &info, &opts).unwrap();
        assert!(greedy.cost <= volcano_cost, "seed {seed}");
        check_plan_properties(&pd, &greedy.plan).unwrap();
        assert_eq!(reevaluate_plan(&pd, &greedy.plan), greedy.cost, "seed {seed}");
        let exhaustive_greedy = greedy_select(
            &pd,
            &info,
            &GreedyOptions {
                exhaustive_benefits: true,
                ..GreedyOptions::default()
            },
        )
        .unwrap();
        assert_eq!(greedy.x, exhaustive_greedy.x, "seed {seed}");
        assert_eq!(greedy.cost, exhaustive_greedy.cost, "seed {seed}");

        let base = best_plan_given(&pd, &BTreeSet::new());
        if candidates(&pd, &info, &base).len() <= 10 {
            let oracle = exhaustive_optimize(
                &pd,
                &info,
                &OracleOptions {
                    max_nodes: Some(10),
                    validate_incremental: true,
                },
            )
            .unwrap();
            assert!(oracle.opt_cost <= greedy.cost, "seed {seed}");
            oracle_checked += 1;
        }
    }
    println!(
        "soak: 300 instances; brute-force {brute_checked}, sharability {sharability_checked}, oracle {oracle_checked}"
    );
}
