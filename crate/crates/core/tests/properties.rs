use proptest::prelude::*;

use ia_rcrm::cvxsolve::{solve_precoders, solve_zeroforcers};
use ia_rcrm::ia_core::{build_links, orthonormalize_filters, FilterSet};
use ia_rcrm::model::{gaussian_matrix, gen_channels, rng_from_seed, SystemConfig};
use ia_rcrm::numerics::{self, ComplexMatrix};

fn matrix(seed: u64, rows: usize, cols: usize) -> ComplexMatrix {
    gaussian_matrix(rows, cols, true, &mut rng_from_seed(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nuclear_dominates_frobenius_dominates_spectral(seed in any::<u64>(), rows in 1usize..7, cols in 1usize..7) {
        let m = matrix(seed, rows, cols);
        let s = numerics::singular_values(&m).unwrap();
        let nuc = numerics::nuclear_norm(&m).unwrap();
        let fro = m.frobenius_norm();
        prop_assert!(nuc >= fro * (1.0 - 1e-12));
        prop_assert!(fro >= s[0] * (1.0 - 1e-12));
    }

    #[test]
    fn nuclear_norm_adds_over_blocks(a in any::<u64>(), b in any::<u64>(), r in 1usize..5, c in 1usize..5) {
        let (x, y) = (matrix(a, r, c), matrix(b, c, r));
        let whole = numerics::nuclear_norm(&ComplexMatrix::blkdiag(&[&x, &y])).unwrap();
        let parts = numerics::nuclear_norm(&x).unwrap() + numerics::nuclear_norm(&y).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-10 * parts);
    }

    #[test]
    fn rank_survives_invertible_mixing(seed in any::<u64>(), rows in 2usize..7, r in 1usize..4) {
        let r = r.min(rows);
        let low = &matrix(seed, rows, r) * &matrix(seed ^ 1, r, 4);
        let mix = &ComplexMatrix::identity(4) + &matrix(seed ^ 2, 4, 4).scale(0.1);
        prop_assert_eq!(numerics::rank_tol(&low, 1e-6).unwrap(), numerics::rank_tol(&(&low * &mix), 1e-6).unwrap());
    }

    #[test]
    fn qr_keeps_column_space(seed in any::<u64>(), rows in 1usize..7, cols in 1usize..7) {
        let cols = cols.min(rows);
        let m = matrix(seed, rows, cols);
        let q = numerics::qr_orthonormalize(&m).unwrap();
        prop_assert!((&(&q.adjoint() * &q) - &ComplexMatrix::identity(cols)).max_abs() < 1e-10);
        // m lies in span(q)
        let residual = &m - &(&q.projector() * &m);
        prop_assert!(residual.frobenius_norm() <= 1e-10 * m.frobenius_norm());
    }

    #[test]
    fn orthonormalization_keeps_link_ranks(seed in any::<u64>(), d in 1usize..3) {
        let cfg = SystemConfig::generic(3, 4, 5, d);
        let mut rng = rng_from_seed(seed);
        let ch = gen_channels(&cfg, &mut rng).unwrap();
        let v = (0..3).map(|_| gaussian_matrix(5, d, true, &mut rng)).collect();
        let u = (0..3).map(|_| gaussian_matrix(4, d, true, &mut rng)).collect();
        let f = FilterSet::new(v, u).unwrap();
        let ranks = |f: &FilterSet| {
            let l = build_links(&ch, f).unwrap();
            l.s.iter().chain(&l.j).map(|m| numerics::rank_tol(m, 1e-6).unwrap()).collect::<Vec<_>>()
        };
        prop_assert_eq!(ranks(&f), ranks(&orthonormalize_filters(&f).unwrap()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solver_points_are_certified_feasible(seed in any::<u64>(), d in 1usize..3) {
        let cfg = SystemConfig::generic(3, 3, 4, d);
        let mut rng = rng_from_seed(seed);
        let ch = gen_channels(&cfg, &mut rng).unwrap();
        let u: Vec<_> = (0..3).map(|_| numerics::qr_orthonormalize(&gaussian_matrix(3, d, false, &mut rng)).unwrap()).collect();
        let pre = solve_precoders(&ch, &u, &cfg).unwrap();
        let post = solve_zeroforcers(&ch, &pre.vars, &cfg).unwrap();
        // the receivers that were fixed remain feasible, so the second step cannot be worse
        prop_assert!(post.report.objective <= pre.report.objective + 1e-5);
        let links = build_links(&ch, &FilterSet::new(pre.vars.clone(), post.vars.clone()).unwrap()).unwrap();
        let objective: f64 = links.j.iter().map(|j| numerics::nuclear_norm(j).unwrap()).sum();
        prop_assert!((objective - post.report.objective).abs() <= 1e-6 * objective.max(1.0));
        for s in &links.s {
            prop_assert!((s - &s.adjoint()).frobenius_norm() <= 1e-6 * s.frobenius_norm().max(1.0));
            prop_assert!(numerics::min_eig_herm(&s.hermitian_part()).unwrap() >= cfg.eps - 1e-6);
        }
    }
}
