//! Filter design algorithms: the alternating nuclear-norm scheme and the
//! comparison baselines (leakage minimization, max-SINR, random beamforming
//! with zero-forcing receivers).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cvxsolve::{self, Solution, SolverSettings};
use crate::error::{Error, Result};
use crate::ia_core::{
    apply_power, build_links, interference_covariance, orthonormalize_filters, sum_rate_with_noise, FilterSet,
};
use crate::model::{gaussian_matrix, CellularConfig, ChannelKind, ChannelSet, SystemConfig};
use crate::numerics::{self, ComplexMatrix};

/// Metrics of the filters after one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub nuclear_sum: f64,
    /// `sum_k ||J_k||_F^2`, i.e. leakage at unit power per stream.
    pub leakage: f64,
    pub signal_ranks: Vec<usize>,
    pub interference_ranks: Vec<usize>,
    /// Smallest eigenvalue of `(S_k + S_k^H) / 2` over all users.
    pub min_signal_eig: f64,
    /// Sum rate at the algorithm's operating power, when it has one.
    pub sum_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoTrace {
    pub records: Vec<IterationRecord>,
    pub filters: FilterSet,
    pub iterations_run: usize,
}

fn record(ch: &ChannelSet, v: &[ComplexMatrix], u: &[ComplexMatrix], tau: f64) -> Result<IterationRecord> {
    let links = build_links(ch, &FilterSet::new(v.to_vec(), u.to_vec())?)?;
    let mut rec = IterationRecord {
        nuclear_sum: 0.0,
        leakage: 0.0,
        signal_ranks: Vec::with_capacity(ch.users),
        interference_ranks: Vec::with_capacity(ch.users),
        min_signal_eig: f64::INFINITY,
        sum_rate: None,
    };
    for (s, j) in links.s.iter().zip(&links.j) {
        rec.nuclear_sum += numerics::nuclear_norm(j)?;
        rec.leakage += j.frobenius_norm().powi(2);
        rec.signal_ranks.push(numerics::rank_tol(s, tau)?);
        rec.interference_ranks.push(numerics::rank_tol(j, tau)?);
        rec.min_signal_eig = rec.min_signal_eig.min(numerics::min_eig_herm(&s.hermitian_part())?);
    }
    Ok(rec)
}

/// Random zero-forcers with orthonormal columns: Gaussian matrices passed through QR.
pub fn init_zeroforcers(cfg: &SystemConfig, rng: &mut impl Rng) -> Result<Vec<ComplexMatrix>> {
    (0..cfg.users)
        .map(|_| numerics::qr_orthonormalize(&gaussian_matrix(cfg.rx_antennas, cfg.streams, cfg.complex_gaussian, rng)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RcrmOptions {
    pub rounds: usize,
    /// Orthonormalize the filters at the end of every round instead of once after the loop.
    pub orthonormalize_each_round: bool,
    pub solver: SolverSettings,
}

impl RcrmOptions {
    pub fn new(rounds: usize) -> Self {
        Self { rounds, orthonormalize_each_round: false, solver: SolverSettings::default() }
    }
}

fn at_round(round: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Infeasible { detail, .. } => Error::Infeasible { round, detail },
        other => other,
    }
}

/// Alternates the precoder and zero-forcer subproblems for `n` rounds from
/// random initial zero-forcers, then orthonormalizes.
pub fn rcrm_alternating(ch: &ChannelSet, cfg: &SystemConfig, n: usize, rng: &mut impl Rng) -> Result<AlgoTrace> {
    let u0 = init_zeroforcers(cfg, rng)?;
    rcrm_from(ch, cfg, u0, &RcrmOptions::new(n))
}

/// [`rcrm_alternating`] from given initial zero-forcers.
pub fn rcrm_from(ch: &ChannelSet, cfg: &SystemConfig, u0: Vec<ComplexMatrix>, opts: &RcrmOptions) -> Result<AlgoTrace> {
    if opts.rounds == 0 {
        return Err(Error::contract("at least one round is required"));
    }
    let cellular = match cfg.channel_kind {
        ChannelKind::Cellular => Some(CellularConfig::new(cfg.clone())?),
        _ => None,
    };
    let mut u = u0;
    let mut v: Option<Vec<ComplexMatrix>> = None;
    let mut records = Vec::with_capacity(opts.rounds);
    for round in 0..opts.rounds {
        let warm_v = v.as_deref();
        let Solution { vars: new_v, .. } = match &cellular {
            Some(cc) => cvxsolve::solve_precoders_cellular_with(ch, &u, cc, warm_v, &opts.solver),
            None => cvxsolve::solve_precoders_with(ch, &u, cfg, warm_v, &opts.solver),
        }
        .map_err(at_round(round))?;
        let Solution { vars: new_u, .. } =
            cvxsolve::solve_zeroforcers_with(ch, &new_v, cfg, Some(&u), &opts.solver).map_err(at_round(round))?;
        records.push(record(ch, &new_v, &new_u, cfg.dim_threshold)?);
        if opts.orthonormalize_each_round {
            let f = orthonormalize_filters(&FilterSet::new(new_v, new_u)?)?;
            v = Some(f.v);
            u = f.u;
        } else {
            v = Some(new_v);
            u = new_u;
        }
    }
    let filters = orthonormalize_filters(&FilterSet::new(v.expect("at least one round"), u)?)?;
    Ok(AlgoTrace { iterations_run: records.len(), records, filters })
}

/// Eigenvectors of the `d` smallest eigenvalues, smallest first.
fn smallest_eigvecs(q: &ComplexMatrix, d: usize) -> Result<ComplexMatrix> {
    let eig = numerics::herm_eig(q)?;
    let n = q.rows();
    let cols: Vec<ComplexMatrix> = (0..d).map(|i| eig.eigenvectors.column(n - 1 - i)).collect();
    let refs: Vec<&ComplexMatrix> = cols.iter().collect();
    Ok(ComplexMatrix::hcat(n, &refs))
}

/// `sum_{k != l} H_kl^H U_k U_k^H H_kl`, the interference covariance of
/// transmitter `l` in the reverse network.
fn reverse_covariance(ch: &ChannelSet, u: &[ComplexMatrix], l: usize) -> ComplexMatrix {
    let mut q = ComplexMatrix::zeros(ch.tx_antennas, ch.tx_antennas);
    for k in (0..ch.users).filter(|&k| k != l) {
        let hu = &ch.get(k, l).adjoint() * &u[k];
        q = &q + &(&hu * &hu.adjoint());
    }
    q.hermitian_part()
}

fn check_start(ch: &ChannelSet, f0: &FilterSet, iters: usize) -> Result<usize> {
    if iters == 0 {
        return Err(Error::contract("at least one iteration is required"));
    }
    if f0.users() != ch.users {
        return Err(Error::contract(format!("{} filter pairs for {} users", f0.users(), ch.users)));
    }
    build_links(ch, f0)?;
    Ok(f0.streams())
}

/// Alternating leakage minimization: each half-step replaces one side by the
/// smallest-eigenvalue eigenvectors of its interference covariance.
pub fn leakage_min(ch: &ChannelSet, f0: &FilterSet, iters: usize, tau: f64) -> Result<AlgoTrace> {
    let d = check_start(ch, f0, iters)?;
    let mut v = f0.v.clone();
    let mut u = f0.u.clone();
    let mut records = Vec::with_capacity(iters);
    for _ in 0..iters {
        for k in 0..ch.users {
            u[k] = smallest_eigvecs(&interference_covariance(ch, &v, k, 1.0), d)?;
        }
        for l in 0..ch.users {
            v[l] = smallest_eigvecs(&reverse_covariance(ch, &u, l), d)?;
        }
        records.push(record(ch, &v, &u, tau)?);
    }
    let mut filters = FilterSet::new(v, u)?;
    filters.orthonormal = true;
    Ok(AlgoTrace { iterations_run: records.len(), records, filters })
}

fn solve_hpd(b: &ComplexMatrix, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
    let chol = b
        .as_dmatrix()
        .clone()
        .cholesky()
        .ok_or(Error::Numerical { op: "cholesky", rows: b.rows(), cols: b.cols() })?;
    Ok(ComplexMatrix::wrap(chol.solve(rhs.as_dmatrix())))
}

fn normalized(x: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = x.frobenius_norm();
    if !(n > 0.0) {
        return Err(Error::Degenerate { what: "zero filter column".into(), user: None });
    }
    Ok(x.scale(1.0 / n))
}

/// Per-stream SINR-maximizing receivers for transmit filters `tx` over the
/// channels `link(k, l)` (receiver `k`, transmitter `l`).
fn sinr_receivers(
    link: impl Fn(usize, usize) -> ComplexMatrix,
    tx: &[ComplexMatrix],
    p: f64,
    noise_var: f64,
) -> Result<Vec<ComplexMatrix>> {
    let users = tx.len();
    let mut out = Vec::with_capacity(users);
    for k in 0..users {
        let dim = link(k, k).rows();
        let mut total = ComplexMatrix::identity(dim).scale(noise_var);
        for l in 0..users {
            let hv = &link(k, l) * &tx[l];
            total = &total + &(&hv * &hv.adjoint()).scale(p);
        }
        let direct = &link(k, k) * &tx[k];
        let mut cols = Vec::with_capacity(tx[k].cols());
        for m in 0..tx[k].cols() {
            let h = direct.column(m);
            let b = (&total - &(&h * &h.adjoint()).scale(p)).hermitian_part();
            cols.push(normalized(&solve_hpd(&b, &h)?)?);
        }
        let refs: Vec<&ComplexMatrix> = cols.iter().collect();
        out.push(ComplexMatrix::hcat(dim, &refs));
    }
    Ok(out)
}

/// Alternating max-SINR filter updates at per-stream power `10^(P/10) / d`,
/// in the forward and then the reverse network. Columns are unit norm but not
/// orthogonalized.
pub fn max_sinr(ch: &ChannelSet, f0: &FilterSet, iters: usize, p_db: f64, noise_var: f64, tau: f64) -> Result<AlgoTrace> {
    let d = check_start(ch, f0, iters)?;
    if !(noise_var > 0.0) {
        return Err(Error::contract("noise variance must be positive"));
    }
    let p = 10f64.powf(p_db / 10.0) / d as f64;
    let mut v: Vec<ComplexMatrix> = f0
        .v
        .iter()
        .map(|m| {
            let cols: Vec<ComplexMatrix> = (0..m.cols()).map(|c| normalized(&m.column(c))).collect::<Result<_>>()?;
            let refs: Vec<&ComplexMatrix> = cols.iter().collect();
            Ok(ComplexMatrix::hcat(m.rows(), &refs))
        })
        .collect::<Result<_>>()?;
    let mut u = f0.u.clone();
    let mut records = Vec::with_capacity(iters);
    for _ in 0..iters {
        u = sinr_receivers(|k, l| ch.get(k, l).clone(), &v, p, noise_var)?;
        v = sinr_receivers(|l, k| ch.get(k, l).adjoint(), &u, p, noise_var)?;
        let mut rec = record(ch, &v, &u, tau)?;
        let powered = apply_power(&FilterSet::new(v.clone(), u.clone())?, p_db, d)?;
        rec.sum_rate = Some(sum_rate_with_noise(&build_links(ch, &powered)?, noise_var));
        records.push(rec);
    }
    Ok(AlgoTrace { iterations_run: records.len(), records, filters: FilterSet::new(v, u)? })
}

/// [`max_sinr`] followed by orthonormalization of every filter.
pub fn max_sinr_qr(ch: &ChannelSet, f0: &FilterSet, iters: usize, p_db: f64, noise_var: f64, tau: f64) -> Result<AlgoTrace> {
    let mut trace = max_sinr(ch, f0, iters, p_db, noise_var, tau)?;
    trace.filters = orthonormalize_filters(&trace.filters)?;
    Ok(trace)
}

/// Random unit beamformers per cellular user and zero-forcing receivers built
/// from the `d` weakest interference directions.
pub fn random_bf_zf_cellular(ch: &ChannelSet, cfg: &CellularConfig, rng: &mut impl Rng) -> Result<FilterSet> {
    let sys = cfg.system();
    let n = cfg.per_user_antennas();
    let d = sys.streams;
    let mut v = Vec::with_capacity(sys.users);
    for _ in 0..sys.users {
        let mut vk = ComplexMatrix::zeros(sys.tx_antennas, d);
        for user in 0..d {
            let w = normalized(&gaussian_matrix(n, 1, sys.complex_gaussian, rng))?;
            for (i, r) in cfg.user_rows(user).enumerate() {
                vk.set(r, user, w.get(i, 0));
            }
        }
        v.push(vk);
    }
    let u = (0..sys.users)
        .map(|k| smallest_eigvecs(&interference_covariance(ch, &v, k, 1.0), d))
        .collect::<Result<Vec<_>>>()?;
    let mut f = FilterSet::new(v, u)?;
    f.orthonormal = true;
    Ok(f)
}

/// Orthonormal random starting filters for the iterative baselines.
pub fn random_filters(cfg: &SystemConfig, rng: &mut impl Rng) -> Result<FilterSet> {
    let v = (0..cfg.users)
        .map(|_| numerics::qr_orthonormalize(&gaussian_matrix(cfg.tx_antennas, cfg.streams, cfg.complex_gaussian, rng)))
        .collect::<Result<Vec<_>>>()?;
    let u = init_zeroforcers(cfg, rng)?;
    let mut f = FilterSet::new(v, u)?;
    f.orthonormal = true;
    Ok(f)
}
