use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::oracle_solve;
use super::*;
use crate::slice::{generate_slice, SliceGenParams, SliceKind, VirtualLink, Vnf};
use crate::topology::{generate_topology, NodeKind, PhysicalLink, PhysicalNode, TopologyDefaults};

fn two_servers(loads: [f64; 2]) -> NetworkGraph {
    let mut g = generate_topology(2, &[1, 1], &TopologyDefaults::default()).unwrap();
    let servers = g.servers().to_vec();
    for (k, load) in servers.into_iter().zip(loads) {
        g.set_cpu_alloc(k, load);
    }
    g
}

fn slice_of(vnfs: &[(Plane, f64)], links: &[(usize, usize)], k_rel: u32, budget: f64) -> SliceRequest {
    SliceRequest {
        id: 1,
        vnfs: vnfs
            .iter()
            .enumerate()
            .map(|(id, &(plane, cpu))| Vnf {
                id,
                plane,
                cpu_demand: cpu,
                proc_delay: 0.3,
            })
            .collect(),
        vlinks: links
            .iter()
            .map(|&(src, dst)| VirtualLink {
                src,
                dst,
                bw_demand: 50.0,
            })
            .collect(),
        delay_budget: budget,
        k_rel_control: k_rel,
        k_rel_data: k_rel,
        kind: SliceKind::Legitimate,
    }
}

fn both_strategies() -> [SolverOptions; 2] {
    [SolverOptions::default(), SolverOptions::lp_relaxation()]
}

#[test]
fn single_vnf_instance_shape() {
    let g = two_servers([0.0, 0.0]);
    let inst = build_instance(&g, &slice_of(&[(Plane::Control, 1.0)], &[], 1, 15.0)).unwrap();
    assert_eq!(inst.assign_var_count(), 2);
    assert_eq!(inst.flow_var_count(), 0);
    let lp = inst.to_linear_program();
    let row = lp.rows.iter().find(|r| r.name == "assign_0").unwrap();
    assert_eq!(row.coeffs, vec![(0, 1.0), (1, 1.0)]);
    assert_eq!(row.rhs, 1.0);
}

#[test]
fn default_scale_variable_counts() {
    let g = generate_topology(200, &[5, 4], &TopologyDefaults::default()).unwrap();
    let s = generate_slice(&mut ChaCha8Rng::seed_from_u64(1), &SliceGenParams::default(), 1).unwrap();
    let inst = build_instance(&g, &s).unwrap();
    assert_eq!(inst.assign_var_count(), 2000);
    assert_eq!(inst.flow_var_count(), 9 * 2 * 225);
}

#[test]
fn system_budget_short_circuit() {
    // 10.75 GHz requested, 8 GHz left in the whole system.
    let g = two_servers([21.0, 21.0]);
    let vnfs: Vec<(Plane, f64)> = (0..10).map(|_| (Plane::Data, 1.075)).collect();
    let links: Vec<(usize, usize)> = (1..10).map(|j| (j - 1, j)).collect();
    let inst = build_instance(&g, &slice_of(&vnfs, &links, 10, 100.0)).unwrap();
    assert!(!inst.budget_ok);
    for opts in both_strategies() {
        let sol = solve(&inst, &opts).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible(InfeasibleReason::SystemCpuBudget));
    }
}

#[test]
fn symmetric_tie_goes_to_lowest_server() {
    let g = two_servers([0.0, 0.0]);
    let inst = build_instance(&g, &slice_of(&[(Plane::Control, 1.3)], &[], 1, 15.0)).unwrap();
    for opts in both_strategies() {
        let sol = solve(&inst, &opts).unwrap();
        assert!(sol.is_optimal());
        assert_eq!(sol.placement, vec![0]);
        assert!((sol.objective_value - 1.3).abs() < 1e-9);
        assert_eq!(sol.placement_ids(&inst), vec!["s0"]);
    }
}

#[test]
fn least_loaded_server_wins() {
    let g = two_servers([5.0, 0.0]);
    let inst = build_instance(&g, &slice_of(&[(Plane::Control, 1.0)], &[], 1, 15.0)).unwrap();
    for opts in both_strategies() {
        let sol = solve(&inst, &opts).unwrap();
        assert_eq!(sol.placement, vec![1]);
        assert!((sol.objective_value - 1.0).abs() < 1e-9);
    }
}

#[test]
fn isolation_spreads_same_plane_vnfs() {
    let g = two_servers([0.0, 0.0]);
    let s = slice_of(&[(Plane::Control, 1.0), (Plane::Control, 1.0)], &[(0, 1)], 1, 15.0);
    let inst = build_instance(&g, &s).unwrap();
    for opts in both_strategies() {
        let sol = solve(&inst, &opts).unwrap();
        assert_ne!(sol.placement[0], sol.placement[1]);
        // s0 -> edge0 -> s1 at zero utilization.
        assert!((sol.objective_value - (2.0 + 0.26)).abs() < 1e-9);
        assert!(validate_solution(&inst, &sol).all_pass());
    }
    let packed = build_instance(&g, &s.clone().with_k_rel(2)).unwrap();
    let sol = solve(&packed, &SolverOptions::default()).unwrap();
    assert_eq!(sol.placement, vec![0, 0]);
    assert!(sol.flows.iter().all(Vec::is_empty));
}

#[test]
fn delay_budget_below_processing_is_infeasible() {
    let g = two_servers([0.0, 0.0]);
    // Two VNFs of 0.3 ms each, plus host delays, exceed 0.5 ms.
    let s = slice_of(&[(Plane::Control, 1.0), (Plane::Data, 1.0)], &[(0, 1)], 1, 0.5);
    let inst = build_instance(&g, &s).unwrap();
    for opts in both_strategies() {
        let sol = solve(&inst, &opts).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible(InfeasibleReason::NoFeasibleEmbedding));
    }
    assert!(!oracle_solve(&inst).unwrap().is_optimal());
}

#[test]
fn only_one_placement_fits() {
    // s0 has room for one VNF only; isolation forbids sharing s1.
    let g = two_servers([24.0, 0.0]);
    let s = slice_of(&[(Plane::Control, 0.9), (Plane::Control, 0.9)], &[(0, 1)], 1, 15.0);
    let inst = build_instance(&g, &s).unwrap();
    let oracle = oracle_solve(&inst).unwrap();
    let mut hosts = oracle.placement.clone();
    hosts.sort_unstable();
    assert_eq!(hosts, vec![0, 1]);
    for opts in both_strategies() {
        let sol = solve(&inst, &opts).unwrap();
        assert!((sol.objective_value - oracle.objective_value).abs() < 1e-9);
    }
}

#[test]
fn oracle_size_guard() {
    let g = generate_topology(8, &[1, 1], &TopologyDefaults::default()).unwrap();
    let inst = build_instance(&g, &slice_of(&[(Plane::Control, 1.0)], &[], 1, 15.0)).unwrap();
    assert!(oracle_solve(&inst).is_err());
}

#[test]
fn validator_flags_isolation_breach() {
    let g = two_servers([0.0, 0.0]);
    let s = slice_of(&[(Plane::Control, 1.0), (Plane::Control, 1.0)], &[(0, 1)], 1, 15.0);
    let inst = build_instance(&g, &s).unwrap();
    let sol = Solution {
        status: SolveStatus::Optimal,
        placement: vec![0, 0],
        flows: vec![Vec::new()],
        objective_value: 2.0,
        realized_delay: 0.0,
        stats: SolveStats::default(),
    };
    let report = validate_solution(&inst, &sol);
    assert!(!report.check(ConstraintFamily::ControlIsolation).passed);
    assert!(report.check(ConstraintFamily::DataIsolation).passed);
    assert!(report.check(ConstraintFamily::FlowConservation).passed);
}

#[test]
fn validator_flags_leak_at_transit_switch() {
    let g = two_servers([0.0, 0.0]);
    let s = slice_of(&[(Plane::Control, 1.0), (Plane::Data, 1.0)], &[(0, 1)], 1, 15.0);
    let inst = build_instance(&g, &s).unwrap();
    let mut sol = solve(&inst, &SolverOptions::default()).unwrap();
    assert!(validate_solution(&inst, &sol).all_pass());

    // Force the VNFs apart and route only the first hop: flow enters edge0 and vanishes.
    sol.placement = vec![0, 1];
    let edge = g.node_index("edge0").unwrap();
    let s0 = g.node_index("s0").unwrap();
    let first_hop = (0..g.arc_count()).find(|&a| g.arc_endpoints(a) == (s0, edge)).unwrap();
    sol.flows = vec![vec![ArcFlow { arc: first_hop, amount: 1.0 }]];
    let report = validate_solution(&inst, &sol);
    let check = report.check(ConstraintFamily::FlowConservation);
    assert!(!check.passed);
    assert!(check.violations.iter().any(|v| v.contains("node edge0")), "{check:?}");
}

#[test]
fn lp_export_uses_stable_names() {
    let g = two_servers([0.0, 0.0]);
    let s = slice_of(&[(Plane::Control, 1.0), (Plane::Data, 1.0)], &[(0, 1)], 1, 15.0);
    let inst = build_instance(&g, &s).unwrap();
    let text = write_lp(&inst);
    assert!(text.starts_with("\\ slice 1"));
    assert!(text.contains("u_0_s0") && text.contains("u_1_s1"));
    assert!(text.contains("y_0_1_s0_edge0") && text.contains("y_0_1_edge0_s1"));
    assert!(text.contains(" assign_0: 1 u_0_s0 + 1 u_0_s1 = 1"));
    assert!(text.contains("Binaries") && text.trim_end().ends_with("End"));
    assert_eq!(text, write_lp(&inst));
}

/// Random connected graph with `servers` servers, up to two switches and
/// at most six links; random loads and link utilizations.
fn tiny_graph(rng: &mut ChaCha8Rng) -> NetworkGraph {
    loop {
        let servers = rng.gen_range(2..=6);
        let switches = rng.gen_range(0..=2usize.min(7 - servers));
        let total = servers + switches;
        let mut nodes = Vec::new();
        for i in 0..servers {
            let cap = if rng.gen_bool(0.2) { 3.0 } else { 25.0 };
            nodes.push(PhysicalNode {
                id: format!("s{i}"),
                kind: NodeKind::Server,
                cpu_max: cap,
                cpu_alloc: (rng.gen_range(0.0..cap * 0.9) * 1e3).round() / 1e3,
                proc_delay: [0.0, 0.2][rng.gen_range(0..2)],
            });
        }
        for i in 0..switches {
            nodes.push(PhysicalNode {
                id: format!("w{i}"),
                kind: NodeKind::Switch,
                cpu_max: 0.0,
                cpu_alloc: 0.0,
                proc_delay: 0.0,
            });
        }
        let mut pairs = Vec::new();
        for v in 1..total {
            pairs.push((rng.gen_range(0..v), v));
        }
        while pairs.len() < 6 && rng.gen_bool(0.5) {
            let a = rng.gen_range(0..total);
            let b = rng.gen_range(0..total);
            if a != b && !pairs.contains(&(a.min(b), a.max(b))) {
                pairs.push((a.min(b), a.max(b)));
            }
        }
        if pairs.len() > 6 {
            continue;
        }
        let links = pairs
            .into_iter()
            .map(|(a, b)| PhysicalLink {
                a,
                b,
                bw_max: 1000.0,
                bw_alloc: (rng.gen_range(0.0..700.0f64)).round(),
                delay_init: 0.13,
                delay_slope: 3.5,
            })
            .collect();
        return NetworkGraph::new(nodes, links).unwrap();
    }
}

fn tiny_slice(rng: &mut ChaCha8Rng) -> SliceRequest {
    let params = SliceGenParams {
        vnf_count: rng.gen_range(1..=4),
        control_count: Some(rng.gen_range(0..=2)),
        shape: if rng.gen_bool(0.5) {
            crate::slice::ChainShape::Chain
        } else {
            crate::slice::ChainShape::RandomDag { extra_edge_prob: 0.4 }
        },
        delay_budget_ms: rng.gen_range(2.0..10.0),
        ..Default::default()
    }
    .with_k_rel(rng.gen_range(1..=2));
    let mut params = params;
    if params.control_count.unwrap() > params.vnf_count {
        params.control_count = Some(params.vnf_count);
    }
    generate_slice(rng, &params, 1).unwrap()
}

#[test]
fn solvers_match_oracle_on_random_tiny_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut feasible = 0;
    for _ in 0..60 {
        let g = tiny_graph(&mut rng);
        let s = tiny_slice(&mut rng);
        let inst = build_instance(&g, &s).unwrap();
        let oracle = oracle_solve(&inst).unwrap();
        for opts in both_strategies() {
            let sol = solve(&inst, &opts).unwrap();
            assert_eq!(sol.is_optimal(), oracle.is_optimal(), "{:?} on {inst:?}", opts.strategy);
            if sol.is_optimal() {
                assert!(
                    (sol.objective_value - oracle.objective_value).abs() < 1e-6,
                    "{:?}: {} vs oracle {}",
                    opts.strategy,
                    sol.objective_value,
                    oracle.objective_value
                );
                let report = validate_solution(&inst, &sol);
                assert!(report.all_pass(), "{:?}", report.failures().collect::<Vec<_>>());
            }
        }
        feasible += usize::from(oracle.is_optimal());
    }
    assert!(feasible >= 20, "only {feasible} feasible instances");
}

#[test]
fn infeasibility_is_monotone_in_delay_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..40 {
        let g = tiny_graph(&mut rng);
        let s = tiny_slice(&mut rng);
        let mut last_feasible = true;
        for budget in [12.0, 8.0, 5.0, 3.0, 2.0, 1.0] {
            let mut s = s.clone();
            s.delay_budget = budget;
            let sol = solve(&build_instance(&g, &s).unwrap(), &SolverOptions::default()).unwrap();
            if !last_feasible {
                assert!(!sol.is_optimal(), "feasible again at budget {budget}");
            }
            last_feasible = sol.is_optimal();
        }
    }
}

#[test]
fn node_limit_is_an_error() {
    let g = generate_topology(20, &[2, 2], &TopologyDefaults::default()).unwrap();
    let s = generate_slice(&mut ChaCha8Rng::seed_from_u64(3), &SliceGenParams::default(), 1).unwrap();
    let inst = build_instance(&g, &s).unwrap();
    let opts = SolverOptions {
        node_limit: 3,
        ..Default::default()
    };
    assert!(matches!(solve(&inst, &opts), Err(Error::ResourceLimit { .. })));
}

#[test]
fn capacity_bound_links_fall_back_to_lp_routing() {
    // Ring s0 - w0 - s1 with a direct s0 - s1 link that is almost full.
    let server = |id: &str| PhysicalNode {
        id: id.into(),
        kind: NodeKind::Server,
        cpu_max: 25.0,
        cpu_alloc: 0.0,
        proc_delay: 0.2,
    };
    let nodes = vec![
        server("s0"),
        server("s1"),
        PhysicalNode {
            id: "w0".into(),
            kind: NodeKind::Switch,
            cpu_max: 0.0,
            cpu_alloc: 0.0,
            proc_delay: 0.0,
        },
    ];
    let link = |a, b, alloc| PhysicalLink {
        a,
        b,
        bw_max: 100.0,
        bw_alloc: alloc,
        delay_init: 0.1,
        delay_slope: 0.0,
    };
    let g = NetworkGraph::new(nodes, vec![link(0, 1, 30.0), link(0, 2, 0.0), link(2, 1, 0.0)]).unwrap();
    // Two control VNFs apart (K=1) exchanging 50 Mbps each way: only one
    // direction fits on the direct link, the other detours through w0.
    let s = slice_of(&[(Plane::Control, 1.0), (Plane::Control, 1.0)], &[(0, 1), (1, 0)], 1, 15.0);
    let inst = build_instance(&g, &s).unwrap();
    for opts in both_strategies() {
        let sol = solve(&inst, &opts).unwrap();
        assert!(sol.is_optimal());
        let report = validate_solution(&inst, &sol);
        assert!(report.all_pass(), "{:?}", report.failures().collect::<Vec<_>>());
    }
    let a = solve(&inst, &SolverOptions::default()).unwrap();
    let b = solve(&inst, &SolverOptions::lp_relaxation()).unwrap();
    assert!((a.objective_value - b.objective_value).abs() < 1e-6);
}

#[test]
fn identical_servers_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for (servers, fanouts) in [(6, vec![1, 1]), (6, vec![3]), (4, vec![2, 1]), (6, vec![2])] {
        let g = generate_topology(servers, &fanouts, &TopologyDefaults::default()).unwrap();
        for _ in 0..8 {
            let s = tiny_slice(&mut rng);
            let inst = build_instance(&g, &s).unwrap();
            let oracle = oracle_solve(&inst).unwrap();
            for opts in both_strategies() {
                let sol = solve(&inst, &opts).unwrap();
                assert_eq!(sol.is_optimal(), oracle.is_optimal(), "{:?}", opts.strategy);
                if sol.is_optimal() {
                    assert!((sol.objective_value - oracle.objective_value).abs() < 1e-6);
                }
            }
        }
    }
}
