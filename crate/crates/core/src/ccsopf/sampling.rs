use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acpf::LoadVector;
use crate::caseio::NetworkCase;

/// Draw `k` load realizations. Each bus gets its own multiplier
/// `m ~ U[1 − R, 1 + R]` applied to both active and reactive demand, so the
/// power factor stays at its nominal value.
pub fn sample_loads(case: &NetworkCase, radius: f64, k: usize, seed: u64) -> Vec<LoadVector> {
    draw(case, radius, k, &mut sampling_rng(seed))
}

/// Stream 1 of the seeded ChaCha generator; weight init uses stream 0.
fn sampling_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn draw(case: &NetworkCase, radius: f64, k: usize, rng: &mut ChaCha8Rng) -> Vec<LoadVector> {
    let nominal = case.nominal_loads();
    (0..k)
        .map(|_| {
            let mut phi = nominal.clone();
            for (p, q) in phi.p_d.iter_mut().zip(phi.q_d.iter_mut()) {
                let m = 1.0 + radius * (2.0 * rng.random::<f64>() - 1.0);
                *p *= m;
                *q *= m;
            }
            phi
        })
        .collect()
}

/// Disjoint training and test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSplit {
    pub train: Vec<LoadVector>,
    pub test: Vec<LoadVector>,
}

/// One seeded pool of `n_train + n_test` draws, shuffled and cut in two.
pub fn split_samples(
    case: &NetworkCase,
    radius: f64,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> SampleSplit {
    let mut rng = sampling_rng(seed);
    let mut pool = draw(case, radius, n_train + n_test, &mut rng);
    pool.shuffle(&mut rng);
    let test = pool.split_off(n_train);
    SampleSplit { train: pool, test }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caseio::parse_case;

    fn case14() -> NetworkCase {
        parse_case(include_str!("../../fixtures/case14_ieee.m")).unwrap()
    }

    #[test]
    fn zero_radius_gives_nominal() {
        let case = case14();
        let nominal = case.nominal_loads();
        assert!(sample_loads(&case, 0.0, 20, 3).iter().all(|s| *s == nominal));
    }

    #[test]
    fn samples_stay_in_band_with_fixed_power_factor() {
        let case = case14();
        let nominal = case.nominal_loads();
        for s in sample_loads(&case, 0.1, 200, 5) {
            for n in 0..case.n_bus() {
                assert!((s.p_d[n] - nominal.p_d[n]).abs() <= 0.1 * nominal.p_d[n].abs() + 1e-15);
                if nominal.p_d[n] != 0.0 {
                    let m = s.p_d[n] / nominal.p_d[n];
                    assert!((s.q_d[n] - m * nominal.q_d[n]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let case = case14();
        let a = split_samples(&case, 0.1, 800, 200, 1);
        assert_eq!((a.train.len(), a.test.len()), (800, 200));
        assert_eq!(a, split_samples(&case, 0.1, 800, 200, 1));
        assert_ne!(a, split_samples(&case, 0.1, 800, 200, 2));
        let mut pool = sample_loads(&case, 0.1, 1000, 1);
        for s in a.train.iter().chain(&a.test) {
            let pos = pool.iter().position(|p| p == s).expect("split sample not in pool");
            pool.swap_remove(pos);
        }
        assert!(pool.is_empty());
    }
}
