use ccopf::acpf::{LoadVector, Network};
use ccopf::caseio::parse_case;
use ccopf::ccsopf::sample_loads;
use ccopf::policy::{forward, init_policy, policy_jacobian, PolicyMode, PolicyParams};
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn net(text: &str) -> Network {
    Network::new(parse_case(text).unwrap()).unwrap()
}

fn fd_check(net: &Network, mode: PolicyMode, seed: u64) {
    let params = init_policy(&net.index, mode, seed);
    let phi = sample_loads(&net.case, 0.1, 1, seed).remove(0);
    let jac = policy_jacobian(&params, &phi).unwrap();
    let frozen = params.frozen_mask();
    let trainable: Vec<usize> = (0..params.dim_w()).filter(|&i| !frozen[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, trainable.len(), 50.min(trainable.len()));
    let h = 1e-5;
    for p in picks {
        let c = trainable[p];
        let eval = |s: f64| {
            let mut w = params.clone();
            w.weights[c] += s;
            forward(&w, &phi).unwrap().to_x()
        };
        let (plus, minus) = (eval(h), eval(-h));
        for r in 0..params.output_dim() {
            let fd = (plus[r] - minus[r]) / (2.0 * h);
            let err = (jac[(r, c)] - fd).abs() / jac[(r, c)].abs().max(1.0);
            assert!(err < 1e-6, "{mode} w[{c}] x[{r}]: {} vs {fd}", jac[(r, c)]);
        }
    }
    for (c, f) in frozen.iter().enumerate() {
        if *f {
            assert!(jac.column(c).iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn weight_jacobian_matches_differences() {
    for text in [
        include_str!("../fixtures/case14_ieee.m"),
        include_str!("../fixtures/case6ww.m"),
    ] {
        let net = net(text);
        for seed in 0..3 {
            fd_check(&net, PolicyMode::Full, seed);
            fd_check(&net, PolicyMode::Agc, seed);
        }
    }
}

#[test]
fn agc_output_depends_only_on_total_demand() {
    let net = net(include_str!("../fixtures/case14_ieee.m"));
    let params = init_policy(&net.index, PolicyMode::Agc, 4);
    let nominal = net.case.nominal_loads();
    let mut shuffled = nominal.clone();
    shuffled.p_d.reverse();
    shuffled.q_d.iter_mut().for_each(|q| *q *= 1.7);
    assert_eq!(forward(&params, &nominal).unwrap(), forward(&params, &shuffled).unwrap());
}

#[test]
fn agc_voltage_setpoints_ignore_load() {
    let net = net(include_str!("../fixtures/case6ww.m"));
    let params = init_policy(&net.index, PolicyMode::Agc, 2);
    let outputs: Vec<_> = sample_loads(&net.case, 0.3, 20, 1)
        .iter()
        .map(|phi| forward(&params, phi).unwrap())
        .collect();
    assert!(outputs.windows(2).all(|w| w[0].v_set == w[1].v_set));
    assert!(outputs.windows(2).any(|w| w[0].p_g != w[1].p_g));
}

#[test]
fn checkpoint_files_round_trip() {
    let net = net(include_str!("../fixtures/case14_ieee.m"));
    let params = init_policy(&net.index, PolicyMode::Agc, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    params.save(&path).unwrap();
    assert_eq!(PolicyParams::load(&path).unwrap(), params);
}

/// Coordinates with a non-degenerate range must sit strictly inside it
/// unless the output tanh is within rounding of ±1; all others must lie in
/// the closed box.
fn check_box(net: &Network, params: &PolicyParams, phi: &LoadVector) -> Result<(), TestCaseError> {
    let cache = params.forward_cached(phi).unwrap();
    for (i, v) in cache.x.iter().enumerate() {
        let (l, u) = (net.index.x_lower[i], net.index.x_upper[i]);
        prop_assert!(l <= *v && *v <= u);
        if l < u && 1.0 - cache.t[i].abs() > 1e-12 {
            prop_assert!(v - l > 0.0 && u - v > 0.0, "x[{}] = {} on [{}, {}]", i, v, l, u);
        }
    }
    Ok(())
}

fn random_loads(rng: &mut ChaCha8Rng, n: usize) -> LoadVector {
    LoadVector {
        p_d: (0..n).map(|_| rng.random_range(-1.0..2.0)).collect(),
        q_d: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn initialized_policies_stay_strictly_inside(seed in any::<u64>(), agc in any::<bool>()) {
        let net = net(include_str!("../fixtures/case14_ieee.m"));
        let mode = if agc { PolicyMode::Agc } else { PolicyMode::Full };
        let params = init_policy(&net.index, mode, seed);
        let phi = sample_loads(&net.case, 0.1, 1, seed).remove(0);
        let cache = params.forward_cached(&phi).unwrap();
        for (i, v) in cache.x.iter().enumerate() {
            let (l, u) = (net.index.x_lower[i], net.index.x_upper[i]);
            if l < u {
                prop_assert!(v - l > 0.0 && u - v > 0.0);
            } else {
                prop_assert_eq!(*v, l);
            }
        }
    }

    #[test]
    fn arbitrary_weights_stay_in_the_box(seed in any::<u64>(), scale in 0.0..30.0f64, agc in any::<bool>()) {
        let net = net(include_str!("../fixtures/case14_ieee.m"));
        let mode = if agc { PolicyMode::Agc } else { PolicyMode::Full };
        let mut params = init_policy(&net.index, mode, seed);
        for w in params.weights.iter_mut() {
            *w *= scale;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        check_box(&net, &params, &random_loads(&mut rng, 14))?;
    }
}
