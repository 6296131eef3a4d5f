use ccopf::acpf::{constraint_values, solve_pf, Dispatch, Network, PfSettings};
use ccopf::baseline::{evaluate_baseline, solve_opf, solve_opf_warm, OpfSettings};
use ccopf::caseio::parse_case;
use ccopf::ccsopf::sample_loads;

fn net(text: &str) -> Network {
    Network::new(parse_case(text).unwrap()).unwrap()
}

fn net14() -> Network {
    net(include_str!("../fixtures/case14_ieee.m"))
}

#[test]
fn nominal_14_bus_cost_near_reported_value() {
    let net = net14();
    let sol = solve_opf(&net, &net.case.nominal_loads(), None, &OpfSettings::default()).unwrap();
    assert!(sol.converged);
    let gap = (sol.cost - 2180.16).abs() / 2180.16;
    assert!(gap < 0.01, "cost {} ({:.2}% off)", sol.cost, 100.0 * gap);
}

/// Exhaustive search over the second unit's output; the slack covers the rest.
fn grid_search(net: &Network) -> (f64, f64) {
    let phi = net.case.nominal_loads();
    let x_mid = Dispatch::midpoint(&net.index);
    let slot = net.index.n_gen();
    let (lo, hi) = (net.index.x_lower[slot], net.index.x_upper[slot]);
    let cost_at = |p2: f64| {
        let x = Dispatch { v_set: x_mid.v_set.clone(), p_g: vec![p2] };
        let u = solve_pf(net, &x, &phi, None, &PfSettings::default()).unwrap();
        net.cost(&x, &u, &phi)
    };
    let mut best = (lo, f64::INFINITY);
    let (mut a, mut b, mut step) = (lo, hi.min(1.2), 0.01);
    for _ in 0..3 {
        let mut p = a;
        while p <= b + 1e-12 {
            let c = cost_at(p);
            if c < best.1 {
                best = (p, c);
            }
            p += step;
        }
        a = (best.0 - step).max(lo);
        b = best.0 + step;
        step /= 100.0;
    }
    best
}

#[test]
fn unconstrained_dispatch_matches_grid_search() {
    let net = net(include_str!("../fixtures/case2_dispatch.m"));
    let (p2, cost) = grid_search(&net);
    assert!((p2 - 0.2).abs() < 1e-3, "{p2} {cost}");
    let sol = solve_opf(&net, &net.case.nominal_loads(), None, &OpfSettings::default()).unwrap();
    assert!(sol.converged);
    assert!((sol.dispatch.p_g[0] - p2).abs() < 1e-3, "{} vs {p2}", sol.dispatch.p_g[0]);
    assert!((sol.cost - cost).abs() < 1e-3 * cost);
}

#[test]
fn warm_start_at_the_optimum_is_a_fixed_point() {
    for text in [include_str!("../fixtures/case14_ieee.m"), include_str!("../fixtures/case6ww.m")] {
        let net = net(text);
        let phi = net.case.nominal_loads();
        let settings = OpfSettings::default();
        let sol = solve_opf(&net, &phi, None, &settings).unwrap();
        assert!(sol.converged);
        let again = solve_opf_warm(&net, &phi, &sol, &settings).unwrap();
        assert!(again.converged);
        assert!(again.outer_rounds <= 2, "{} rounds", again.outer_rounds);
        let drift = (again.cost - sol.cost).abs() / sol.cost;
        assert!(drift < settings.tol_grad, "{} vs {}", again.cost, sol.cost);
    }
}

#[test]
fn converged_solutions_are_feasible() {
    for text in [include_str!("../fixtures/case14_ieee.m"), include_str!("../fixtures/case6ww.m")] {
        let net = net(text);
        let settings = OpfSettings::default();
        let mut converged = 0;
        for phi in sample_loads(&net.case, 0.1, 8, 6) {
            let sol = solve_opf(&net, &phi, None, &settings).unwrap();
            if !sol.converged {
                continue;
            }
            converged += 1;
            assert!(sol.dispatch.within(&net.index));
            let y = constraint_values(&net, &sol.state, &phi);
            let worst = y.residuals().into_iter().fold(f64::NEG_INFINITY, f64::max);
            assert!(worst <= settings.tol_feas, "residual {worst:e}");
            let u = solve_pf(&net, &sol.dispatch, &phi, None, &PfSettings::default()).unwrap();
            assert!((net.cost(&sol.dispatch, &u, &phi) - sol.cost).abs() < 1e-6 * sol.cost);
        }
        assert!(converged >= 6);
    }
}

#[test]
fn solves_are_deterministic() {
    let net = net14();
    let phi = sample_loads(&net.case, 0.1, 1, 2).remove(0);
    let a = solve_opf(&net, &phi, None, &OpfSettings::default()).unwrap();
    let b = solve_opf(&net, &phi, None, &OpfSettings::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn iteration_cap_reports_unconverged() {
    let net = net14();
    let settings = OpfSettings { max_outer: 1, max_inner: 2, ..Default::default() };
    let sol = solve_opf(&net, &net.case.nominal_loads(), None, &settings).unwrap();
    assert!(!sol.converged);
    assert!(sol.iterations <= 2);
}

#[test]
fn metrics_share_the_policy_schema() {
    let net = net(include_str!("../fixtures/case6ww.m"));
    let samples = sample_loads(&net.case, 0.1, 10, 1);
    let m = evaluate_baseline(&net, &samples, &OpfSettings::default()).unwrap();
    assert_eq!(m.policy, "baseline");
    assert_eq!(m.n_samples, 10);
    assert_eq!(m.constraint_labels.len(), net.layout.len());
    let text = m.to_json().unwrap();
    assert_eq!(ccopf::ccsopf::Metrics::from_json(&text).unwrap(), m);
}

#[test]
fn baseline_is_no_more_expensive_than_a_trained_policy() {
    use ccopf::ccsopf::{evaluate, split_samples, train, TrainConfig};
    let net = net14();
    let cfg = TrainConfig { epochs: 2, n_train: 100, n_test: 20, ..Default::default() };
    let policy = train(&net, &cfg).unwrap().params;
    let split = split_samples(&net.case, cfg.radius, cfg.n_train, cfg.n_test, cfg.seed);
    let dnn = evaluate(&net, &policy, &split.test, &cfg.pf).unwrap();
    let settings = OpfSettings::default();
    let mut compared = 0;
    for (phi, policy_cost) in split.test.iter().zip(&dnn.sample_costs) {
        let sol = solve_opf(&net, phi, None, &settings).unwrap();
        if let (true, Some(c)) = (sol.converged, policy_cost) {
            assert!(sol.cost <= c * 1.005, "baseline {} vs policy {c}", sol.cost);
            compared += 1;
        }
    }
    assert!(compared >= 15);
}
