use nalgebra::{Complex, DMatrix};

use super::NetworkCase;
use crate::{Error, Result};

type C64 = Complex<f64>;

/// Two-port admittances of one branch: `[I_f; I_t] = [ff ft; tf tt] [V_f; V_t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub ff: C64,
    pub ft: C64,
    pub tf: C64,
    pub tt: C64,
}

/// Bus admittance matrix `Y = G + jB` plus the per-branch two-ports it was
/// assembled from.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub branches: Vec<BranchAdmittance>,
    /// Nonzero columns of each row (including the diagonal), ascending.
    pub adjacency: Vec<Vec<usize>>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.g.nrows()
    }
}

/// Π-model assembly with the tap and phase shift on the from side.
pub fn build_admittance(case: &NetworkCase) -> Result<AdmittanceMatrix> {
    let n = case.n_bus();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    let mut branches = Vec::with_capacity(case.branches.len());

    for (i, br) in case.branches.iter().enumerate() {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::SingularBranch {
                index: i,
                from: case.buses[br.from].id,
                to: case.buses[br.to].id,
            });
        }
        let ys = C64::new(1.0, 0.0) / C64::new(br.r, br.x);
        let charging = C64::new(0.0, br.b_sh / 2.0);
        let tap = C64::from_polar(br.tap, br.shift);

        let tt = ys + charging;
        let two_port = BranchAdmittance {
            ff: tt / (br.tap * br.tap),
            ft: -ys / tap.conj(),
            tf: -ys / tap,
            tt,
        };

        let (f, t) = (br.from, br.to);
        for (r, c, y) in [
            (f, f, two_port.ff),
            (f, t, two_port.ft),
            (t, f, two_port.tf),
            (t, t, two_port.tt),
        ] {
            g[(r, c)] += y.re;
            b[(r, c)] += y.im;
        }
        branches.push(two_port);
    }

    for (k, bus) in case.buses.iter().enumerate() {
        g[(k, k)] += bus.g_sh;
        b[(k, k)] += bus.b_sh;
    }

    let mut adjacency: Vec<Vec<usize>> = (0..n).map(|k| vec![k]).collect();
    for br in &case.branches {
        adjacency[br.from].push(br.to);
        adjacency[br.to].push(br.from);
    }
    for row in &mut adjacency {
        row.sort_unstable();
        row.dedup();
    }

    Ok(AdmittanceMatrix {
        g,
        b,
        branches,
        adjacency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caseio::parse_case;

    #[test]
    fn single_lossless_branch() {
        let case = parse_case(include_str!("../../fixtures/case2.m")).unwrap();
        let y = build_admittance(&case).unwrap();
        // Y12 = -1 / (j0.1) = +j10
        assert_eq!(y.g[(0, 1)], 0.0);
        assert!((y.b[(0, 1)] - 10.0).abs() < 1e-12);
        assert!((y.b[(0, 0)] + 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_impedance_branch_is_singular() {
        let text = include_str!("../../fixtures/case2.m").replace("\t0\t0.1\t0\t", "\t0\t0\t0\t");
        let case = parse_case(&text).unwrap();
        assert!(matches!(
            build_admittance(&case),
            Err(Error::SingularBranch { index: 0, .. })
        ));
    }

    #[test]
    fn rows_sum_to_zero_without_shunts_or_taps() {
        let mut case = parse_case(include_str!("../../fixtures/case14.m")).unwrap();
        for br in &mut case.branches {
            br.b_sh = 0.0;
            br.tap = 1.0;
            br.shift = 0.0;
        }
        for bus in &mut case.buses {
            bus.g_sh = 0.0;
            bus.b_sh = 0.0;
        }
        let y = build_admittance(&case).unwrap();
        for r in 0..case.n_bus() {
            assert!(y.g.row(r).sum().abs() < 1e-12);
            assert!(y.b.row(r).sum().abs() < 1e-12);
        }
    }
}
