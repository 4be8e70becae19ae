//! Signal and interference matrices and the metrics computed from them:
//! per-user degrees of freedom, sum rate, interference leakage.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ChannelSet;
use crate::numerics::{self, ComplexMatrix};

/// Precoders `v[k]` (`M_t x d`) and zero-forcers `u[k]` (`M_r x d`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSet {
    pub v: Vec<ComplexMatrix>,
    pub u: Vec<ComplexMatrix>,
    /// Columns of every `v[k]` have equal power and are mutually orthogonal,
    /// columns of every `u[k]` are orthonormal.
    pub orthonormal: bool,
    /// Column power applied to the precoders, if any.
    pub power_db: Option<f64>,
}

impl FilterSet {
    pub fn new(v: Vec<ComplexMatrix>, u: Vec<ComplexMatrix>) -> Result<Self> {
        if v.len() != u.len() || v.is_empty() {
            return Err(Error::contract(format!(
                "{} precoders and {} zero-forcers",
                v.len(),
                u.len()
            )));
        }
        let d = v[0].cols();
        if v.iter().chain(&u).any(|m| m.cols() != d) {
            return Err(Error::contract("all filters must carry the same number of streams"));
        }
        Ok(Self {
            v,
            u,
            orthonormal: false,
            power_db: None,
        })
    }

    pub fn users(&self) -> usize {
        self.v.len()
    }

    pub fn streams(&self) -> usize {
        self.v[0].cols()
    }
}

#[derive(Clone, Debug)]
pub struct LinkMatrices {
    /// `S_k = U_k^H H_kk V_k`, `d x d`.
    pub s: Vec<ComplexMatrix>,
    /// `J_k = U_k^H [H_kl V_l]_{l != k}`, `d x (K-1)d`.
    pub j: Vec<ComplexMatrix>,
}

fn check_shapes(ch: &ChannelSet, f: &FilterSet) -> Result<()> {
    if f.users() != ch.users {
        return Err(Error::contract(format!(
            "{} filter pairs for {} users",
            f.users(),
            ch.users
        )));
    }
    for k in 0..ch.users {
        if f.v[k].rows() != ch.tx_antennas || f.u[k].rows() != ch.rx_antennas {
            return Err(Error::contract(format!(
                "user {k}: filters are {}x{} / {}x{} for a {}x{} channel",
                f.v[k].rows(),
                f.v[k].cols(),
                f.u[k].rows(),
                f.u[k].cols(),
                ch.rx_antennas,
                ch.tx_antennas
            )));
        }
    }
    Ok(())
}

/// `[H_kl V_l]` for `l != k` in ascending `l`.
pub fn interference_columns(ch: &ChannelSet, v: &[ComplexMatrix], k: usize) -> ComplexMatrix {
    let blocks: Vec<ComplexMatrix> = (0..ch.users).filter(|&l| l != k).map(|l| ch.get(k, l) * &v[l]).collect();
    let refs: Vec<&ComplexMatrix> = blocks.iter().collect();
    ComplexMatrix::hcat(ch.rx_antennas, &refs)
}

pub fn build_links(ch: &ChannelSet, f: &FilterSet) -> Result<LinkMatrices> {
    check_shapes(ch, f)?;
    let mut s = Vec::with_capacity(ch.users);
    let mut j = Vec::with_capacity(ch.users);
    for k in 0..ch.users {
        let uh = f.u[k].adjoint();
        s.push(&(&uh * ch.get(k, k)) * &f.v[k]);
        j.push(&uh * &interference_columns(ch, &f.v, k));
    }
    Ok(LinkMatrices { s, j })
}

/// Interference-free dimensions of one user, `[rank S_k - rank J_k]^+`.
pub fn per_user_dof(s: &ComplexMatrix, j: &ComplexMatrix, tau: f64) -> Result<usize> {
    let rs = numerics::rank_tol(s, tau)?;
    let rj = numerics::rank_tol(j, tau)?;
    Ok(rs.saturating_sub(rj))
}

/// Per-user dimension counts for normalized filters.
pub fn user_dims(ch: &ChannelSet, f: &FilterSet, tau: f64) -> Result<Vec<usize>> {
    let normalized = orthonormalize_filters(f)?;
    let links = build_links(ch, &normalized)?;
    links
        .s
        .iter()
        .zip(&links.j)
        .map(|(s, j)| per_user_dof(s, j, tau))
        .collect()
}

fn log2_det_hpd(m: &ComplexMatrix) -> f64 {
    let chol = Cholesky::new(m.as_dmatrix().clone()).expect("identity-shifted gram matrix is positive definite");
    let l = chol.l();
    2.0 * (0..m.rows()).map(|i| l[(i, i)].re.ln()).sum::<f64>() / std::f64::consts::LN_2
}

/// `1/2 log2 det(I + (I + J J^H)^{-1} S S^H)` for one user.
pub fn user_rate(s: &ComplexMatrix, j: &ComplexMatrix) -> f64 {
    let d = s.rows();
    let base = &ComplexMatrix::identity(d) + &(j * &j.adjoint());
    let total = &base + &(s * &s.adjoint());
    (0.5 * (log2_det_hpd(&total.hermitian_part()) - log2_det_hpd(&base.hermitian_part()))).max(0.0)
}

/// Sum rate in bits per channel use at unit noise variance.
pub fn sum_rate(links: &LinkMatrices) -> f64 {
    links.s.iter().zip(&links.j).map(|(s, j)| user_rate(s, j)).sum()
}

/// Sum rate with noise variance `noise_var`: signal and interference are
/// whitened by `1/sigma` before the unit-noise formula.
pub fn sum_rate_with_noise(links: &LinkMatrices, noise_var: f64) -> f64 {
    if noise_var == 1.0 {
        return sum_rate(links);
    }
    let w = 1.0 / noise_var.sqrt();
    links
        .s
        .iter()
        .zip(&links.j)
        .map(|(s, j)| user_rate(&s.scale(w), &j.scale(w)))
        .sum()
}

/// `Q_k = sum_{l != k} p H_kl V_l V_l^H H_kl^H` with `p` the per-column power.
pub fn interference_covariance(ch: &ChannelSet, v: &[ComplexMatrix], k: usize, p: f64) -> ComplexMatrix {
    let mut q = ComplexMatrix::zeros(ch.rx_antennas, ch.rx_antennas);
    for l in (0..ch.users).filter(|&l| l != k) {
        let hv = ch.get(k, l) * &v[l];
        q = &q + &(&hv * &hv.adjoint());
    }
    q.scale(p).hermitian_part()
}

/// Total interference leakage `sum_k tr(U_k^H Q_k U_k)` with `Q_k` at power `p_lin / d`.
pub fn leakage(ch: &ChannelSet, f: &FilterSet, p_lin: f64, d: usize) -> Result<f64> {
    check_shapes(ch, f)?;
    let p = p_lin / d as f64;
    let mut total = 0.0;
    for k in 0..ch.users {
        let q = interference_covariance(ch, &f.v, k, p);
        total += (&(&f.u[k].adjoint() * &q) * &f.u[k]).trace().re;
    }
    Ok(total.max(0.0))
}

/// `(p_lin / d) sum_k ||J_k||_F^2`.
pub fn leakage_frobenius(links: &LinkMatrices, p_lin: f64, d: usize) -> f64 {
    p_lin / d as f64 * links.j.iter().map(|j| j.frobenius_norm().powi(2)).sum::<f64>()
}

const UNIT_TOL: f64 = 1e-9;

/// Scales every precoder column to squared norm `10^(P/10) / d`.
pub fn apply_power(f: &FilterSet, p_db: f64, d: usize) -> Result<FilterSet> {
    for (k, v) in f.v.iter().enumerate() {
        if let Some(n) = v.column_norms_sqr().iter().find(|n| (*n - 1.0).abs() > UNIT_TOL) {
            return Err(Error::contract(format!(
                "precoder {k} has a column of squared norm {n}, expected unit columns"
            )));
        }
    }
    let amp = (10f64.powf(p_db / 10.0) / d as f64).sqrt();
    Ok(FilterSet {
        v: f.v.iter().map(|v| v.scale(amp)).collect(),
        u: f.u.clone(),
        orthonormal: f.orthonormal,
        power_db: Some(p_db),
    })
}

/// Replaces every filter by an orthonormal basis of its column space.
pub fn orthonormalize_filters(f: &FilterSet) -> Result<FilterSet> {
    let ortho = |m: &ComplexMatrix, k: usize, side: &str| {
        numerics::qr_orthonormalize(m).map_err(|e| match e {
            Error::Degenerate { what, .. } => Error::Degenerate {
                what: format!("{side} {what}"),
                user: Some(k),
            },
            other => other,
        })
    };
    let v = f
        .v
        .iter()
        .enumerate()
        .map(|(k, m)| ortho(m, k, "precoder"))
        .collect::<Result<Vec<_>>>()?;
    let u = f
        .u
        .iter()
        .enumerate()
        .map(|(k, m)| ortho(m, k, "zero-forcer"))
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterSet {
        v,
        u,
        orthonormal: true,
        power_db: None,
    })
}

fn check_full_rank_signals(ch: &ChannelSet, f: &FilterSet, links: &LinkMatrices) -> Result<()> {
    for (k, s) in links.s.iter().enumerate() {
        let scale = f.u[k].frobenius_norm() * ch.get(k, k).frobenius_norm() * f.v[k].frobenius_norm();
        if numerics::numerical_rank_scaled(s, scale)? < s.rows() {
            return Err(Error::Degenerate {
                what: "signal matrix is rank deficient".into(),
                user: Some(k),
            });
        }
    }
    Ok(())
}

/// Precoder-side transform `V_k <- V_k V_k^H H_kk^H U_k`, which makes every
/// `S_k = (U_k^H H_kk V_k)(U_k^H H_kk V_k)^H` Hermitian positive definite
/// and keeps the rank of every `J_k`.
pub fn lemma2_transform(ch: &ChannelSet, f: &FilterSet) -> Result<FilterSet> {
    let links = build_links(ch, f)?;
    check_full_rank_signals(ch, f, &links)?;
    let v = (0..ch.users)
        .map(|k| &f.v[k] * &(&f.v[k].adjoint() * &(&ch.get(k, k).adjoint() * &f.u[k])))
        .collect();
    Ok(FilterSet {
        v,
        u: f.u.clone(),
        orthonormal: false,
        power_db: None,
    })
}

/// Zero-forcer-side transform `U_k <- U_k U_k^H H_kk V_k`.
pub fn lemma2_transform_receivers(ch: &ChannelSet, f: &FilterSet) -> Result<FilterSet> {
    let links = build_links(ch, f)?;
    check_full_rank_signals(ch, f, &links)?;
    let u = (0..ch.users)
        .map(|k| &f.u[k] * &(&f.u[k].adjoint() * &(ch.get(k, k) * &f.v[k])))
        .collect();
    Ok(FilterSet {
        v: f.v.clone(),
        u,
        orthonormal: false,
        power_db: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_iid_channels, rng_from_seed, ChannelKind, SystemConfig};
    use num_complex::Complex64;

    fn random_filters(ch: &ChannelSet, d: usize, seed: u64) -> FilterSet {
        let mut rng = rng_from_seed(seed);
        let v = (0..ch.users)
            .map(|_| crate::model::gaussian_matrix(ch.tx_antennas, d, true, &mut rng))
            .collect();
        let u = (0..ch.users)
            .map(|_| crate::model::gaussian_matrix(ch.rx_antennas, d, true, &mut rng))
            .collect();
        FilterSet::new(v, u).unwrap()
    }

    #[test]
    fn single_user_has_empty_interference() {
        let cfg = SystemConfig::generic(1, 3, 3, 2);
        let ch = gen_iid_channels(&cfg, &mut rng_from_seed(1)).unwrap();
        let f = random_filters(&ch, 2, 2);
        let links = build_links(&ch, &f).unwrap();
        assert_eq!(links.j[0].shape(), (2, 0));
        let s = &(&f.u[0].adjoint() * ch.get(0, 0)) * &f.v[0];
        assert!((&links.s[0] - &s).max_abs() < 1e-14);
    }

    #[test]
    fn zero_cross_links_give_zero_interference() {
        let cfg = SystemConfig::generic(3, 4, 4, 2);
        let ch = gen_iid_channels(&cfg, &mut rng_from_seed(3)).unwrap().without_cross_links();
        let links = build_links(&ch, &random_filters(&ch, 2, 4)).unwrap();
        assert!(links.j.iter().all(|j| j.max_abs() == 0.0 && j.shape() == (2, 4)));
    }

    #[test]
    fn two_user_interference_block_matches_hand_product() {
        let cfg = SystemConfig::generic(2, 3, 4, 2);
        let ch = gen_iid_channels(&cfg, &mut rng_from_seed(5)).unwrap();
        let f = random_filters(&ch, 2, 6);
        let links = build_links(&ch, &f).unwrap();
        // entry (a, b) of U_0^H H_01 V_1 by explicit summation
        for a in 0..2 {
            for b in 0..2 {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..3 {
                    for t in 0..4 {
                        acc += f.u[0].get(r, a).conj() * ch.get(0, 1).get(r, t) * f.v[1].get(t, b);
                    }
                }
                assert!((links.j[0].get(a, b) - acc).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = SystemConfig::generic(2, 3, 4, 1);
        let ch = gen_iid_channels(&cfg, &mut rng_from_seed(5)).unwrap();
        let mut f = random_filters(&ch, 1, 6);
        f.v[1] = ComplexMatrix::zeros(3, 1);
        assert!(matches!(build_links(&ch, &f), Err(Error::Contract(_))));
    }

    #[test]
    fn dof_formula() {
        let tau = 1e-6;
        let s = ComplexMatrix::identity(2);
        assert_eq!(per_user_dof(&s, &ComplexMatrix::zeros(2, 4), tau).unwrap(), 2);
        let s3 = ComplexMatrix::identity(3);
        let mut j1 = ComplexMatrix::zeros(3, 6);
        j1.set(0, 0, Complex64::new(1.0, 0.0));
        assert_eq!(per_user_dof(&s3, &j1, tau).unwrap(), 2);
        let s1 = ComplexMatrix::diag_real(&[1.0, 0.0]);
        let j2 = ComplexMatrix::identity(2);
        assert_eq!(per_user_dof(&s1, &j2, tau).unwrap(), 0);
    }

    #[test]
    fn rate_closed_forms() {
        let zero = LinkMatrices {
            s: vec![ComplexMatrix::zeros(2, 2); 3],
            j: vec![ComplexMatrix::identity(2); 3],
        };
        assert_eq!(sum_rate(&zero), 0.0);
        let one = LinkMatrices {
            s: vec![ComplexMatrix::identity(3)],
            j: vec![ComplexMatrix::zeros(3, 0)],
        };
        assert!((sum_rate(&one) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rate_matches_eigenvalue_determinant() {
        let cfg = SystemConfig::generic(3, 4, 4, 2);
        let ch = gen_iid_channels(&cfg, &mut rng_from_seed(8)).unwrap();
        let links = build_links(&ch, &random_filters(&ch, 2, 9)).unwrap();
        let mut oracle = 0.0;
        for (s, j) in links.s.iter().zip(&links.j) {
            let a = &ComplexMatrix::identity(2) + &(j * &j.adjoint());
            let b = &a + &(s * &s.adjoint());
            let la: f64 = numerics::herm_eig(&a).unwrap().eigenvalues.iter().map(|x| x.log2()).sum();
            let lb: f64 = numerics::herm_eig(&b).unwrap().eigenvalues.iter().map(|x| x.log2()).sum();
            oracle += 0.5 * (lb - la);
        }
        let r = sum_rate(&links);
        assert!((r - oracle).abs() <= 1e-8 * oracle, "{r} vs {oracle}");
    }

    #[test]
    fn noise_variance_whitening() {
        let cfg = SystemConfig::generic(2, 3, 3, 1);
        let ch = gen_iid_channels(&cfg, &mut rng_from_seed(81)).unwrap();
        let links = build_links(&ch, &random_filters(&ch, 1, 82)).unwrap();
        let scaled = LinkMatrices {
            s: links.s.iter().map(|s| s.scale(0.5)).collect(),
            j: links.j.iter().map(|j| j.scale(0.5)).collect(),
        };
        assert!((sum_rate_with_noise(&links, 4.0) - sum_rate(&scaled)).abs() < 1e-12);
    }

    #[test]
    fn leakage_hand_case() {
        let e1 = ComplexMatrix::eye(2, 1);
        let h = vec![
            vec![ComplexMatrix::identity(2), ComplexMatrix::identity(2)],
            vec![ComplexMatrix::identity(2), ComplexMatrix::identity(2)],
        ];
        let ch = ChannelSet::new(ChannelKind::Generic, h).unwrap();
        let f = FilterSet::new(vec![e1.clone(), e1.clone()], vec![e1.clone(), e1]).unwrap();
        assert!((leakage(&ch, &f, 1.0, 1).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(leakage(&ch.without_cross_links(), &f, 1.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn leakage_trace_equals_frobenius() {
        let cfg = SystemConfig::generic(3, 4, 8, 3);
        let ch = gen_iid_channels(&cfg, &mut rng_from_seed(10)).unwrap();
        let f = random_filters(&ch, 3, 11);
        let t = leakage(&ch, &f, 7.0, 3).unwrap();
        let fr = leakage_frobenius(&build_links(&ch, &f).unwrap(), 7.0, 3);
        assert!((t - fr).abs() <= 1e-8 * fr);
    }

    #[test]
    fn power_application() {
        let cfg = SystemConfig::generic(2, 4, 4, 4);
        let ch = gen_iid_channels(&cfg, &mut rng_from_seed(12)).unwrap();
        for (d, p_db, expected) in [(1, 0.0, 1.0), (1, 10.0, 10.0), (4, 20.0, 25.0)] {
            let f = orthonormalize_filters(&random_filters(&ch, d, 13)).unwrap();
            let g = apply_power(&f, p_db, d).unwrap();
            assert_eq!(g.power_db, Some(p_db));
            assert_eq!(g.u, f.u);
            for v in &g.v {
                for n in v.column_norms_sqr() {
                    assert!((n - expected).abs() < 1e-9 * expected);
                }
            }
        }
        let raw = random_filters(&ch, 2, 14);
        assert!(matches!(apply_power(&raw, 0.0, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn orthonormalization_cases() {
        let cfg = SystemConfig::generic(3, 4, 6, 2);
        let ch = gen_iid_channels(&cfg, &mut rng_from_seed(15)).unwrap();
        let f = random_filters(&ch, 2, 16);
        let o = orthonormalize_filters(&f).unwrap();
        assert!(o.orthonormal);
        for (a, b) in f.v.iter().zip(&o.v) {
            let qa = numerics::qr_orthonormalize(a).unwrap();
            assert!((&qa.projector() - &b.projector()).frobenius_norm() < 1e-9);
        }
        let again = orthonormalize_filters(&o).unwrap();
        for (a, b) in o.u.iter().zip(&again.u) {
            assert!((&a.projector() - &b.projector()).frobenius_norm() < 1e-9);
        }
        let mut scaled = o.clone();
        scaled.v[0] = scaled.v[0].scale(7.0);
        let s = orthonormalize_filters(&scaled).unwrap();
        assert!(s.v[0].column_norms_sqr().iter().all(|n| (n - 1.0).abs() < 1e-12));
        assert!((&s.v[0].projector() - &o.v[0].projector()).frobenius_norm() < 1e-9);

        let mut bad = f.clone();
        bad.u[2] = ComplexMatrix::zeros(4, 2);
        match orthonormalize_filters(&bad) {
            Err(Error::Degenerate { user, .. }) => assert_eq!(user, Some(2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn signal_transform_identity_channel() {
        let h = vec![vec![ComplexMatrix::identity(3)]];
        let ch = ChannelSet::new(ChannelKind::Generic, h).unwrap();
        let b = ComplexMatrix::eye(3, 2);
        let f = FilterSet::new(vec![b.clone()], vec![b]).unwrap();
        let t = lemma2_transform(&ch, &f).unwrap();
        let links = build_links(&ch, &t).unwrap();
        assert!((&links.s[0] - &ComplexMatrix::identity(2)).max_abs() < 1e-14);
    }

    #[test]
    fn signal_transform_rejects_rank_deficient_signal() {
        let cfg = SystemConfig::generic(2, 3, 3, 1);
        let ch = gen_iid_channels(&cfg, &mut rng_from_seed(17)).unwrap();
        let mut f = random_filters(&ch, 1, 18);
        // zero-forcer orthogonal to H_00 v_0 kills the signal
        let hv = ch.get(0, 0) * &f.v[0];
        let mut u = random_filters(&ch, 1, 19).u[0].clone();
        let coef = (&hv.adjoint() * &u).get(0, 0) / (&hv.adjoint() * &hv).get(0, 0);
        u = &u - &hv.scale_complex(coef);
        f.u[0] = u;
        assert!(matches!(lemma2_transform(&ch, &f), Err(Error::Degenerate { user: Some(0), .. })));
    }
}
