//! Monte-Carlo experiments: every trial draws one channel realization, runs
//! each selected algorithm on it, and evaluates sum rate and interference-free
//! dimensions across the power grid.

pub mod cli;
pub mod config;
pub mod output;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{self, RcrmOptions};
use crate::error::{Error, Result};
use crate::ia_core::{apply_power, build_links, sum_rate_with_noise, user_dims, FilterSet};
use crate::model::{gen_channels, rng_from_seed, stream_seed, trial_seed, ChannelSet, SystemConfig};

pub use config::{load_spec, parse_spec};
pub use output::{emit_results, format_results, parse_results};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Rcrm,
    LeakageMin,
    MaxSinr,
    MaxSinrQr,
    RandomBfZf,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::Rcrm, Algorithm::LeakageMin, Algorithm::MaxSinr, Algorithm::MaxSinrQr, Algorithm::RandomBfZf];

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Rcrm => "rcrm",
            Algorithm::LeakageMin => "leakage_min",
            Algorithm::MaxSinr => "max_sinr",
            Algorithm::MaxSinrQr => "max_sinr_qr",
            Algorithm::RandomBfZf => "random_bf_zf",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    /// Random stream reserved for this algorithm within a trial.
    fn stream(self) -> u64 {
        match self {
            Algorithm::Rcrm => 2,
            Algorithm::LeakageMin => 3,
            Algorithm::MaxSinr => 4,
            Algorithm::MaxSinrQr => 5,
            Algorithm::RandomBfZf => 6,
        }
    }
}

const CHANNEL_STREAM: u64 = 0;
const START_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub rcrm: usize,
    pub leakage_min: usize,
    pub max_sinr: usize,
    pub max_sinr_qr: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self { rcrm: 5, leakage_min: 2000, max_sinr: 2000, max_sinr_qr: 2000 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub system: SystemConfig,
    pub algorithms: Vec<Algorithm>,
    pub trials: usize,
    pub budgets: Budgets,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    pub master_seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub orthonormalize_each_round: bool,
}

impl ExperimentSpec {
    pub fn new(system: SystemConfig, algorithms: Vec<Algorithm>, trials: usize, master_seed: u64) -> Self {
        Self {
            system,
            algorithms,
            trials,
            budgets: Budgets::default(),
            output: None,
            format: OutputFormat::Csv,
            master_seed,
            workers: 0,
            orthonormalize_each_round: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..i].contains(a) {
                return bad(format!("algorithm {} listed twice", a.tag()));
            }
        }
        let b = self.budgets;
        if [b.rcrm, b.leakage_min, b.max_sinr, b.max_sinr_qr].contains(&0) {
            return bad("iteration budgets must be at least 1".into());
        }
        if self.system.power_grid_db.is_empty() {
            return bad("power grid is empty".into());
        }
        let cellular = config::cellular(&self.system)?.is_some();
        if self.algorithms.contains(&Algorithm::RandomBfZf) && !cellular {
            return bad("random_bf_zf needs a cellular system".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: String,
    #[serde(rename = "P_db")]
    pub p_db: f64,
    pub mean_sum_rate: f64,
    pub std_sum_rate: f64,
    pub mean_user_dims: f64,
    /// Successful trials that enter the means.
    pub trials: usize,
    pub failures: usize,
}

/// Per-power results of one algorithm on one trial; `None` marks a failure.
type Outcome = Vec<Option<(f64, f64)>>;

fn evaluate(ch: &ChannelSet, cfg: &SystemConfig, f: &FilterSet, p_db: f64) -> Result<(f64, f64)> {
    let d = cfg.streams;
    let links = build_links(ch, &apply_power(f, p_db, d)?)?;
    let rate = sum_rate_with_noise(&links, cfg.noise_var);
    let dims = user_dims(ch, f, cfg.dim_threshold)?;
    let mean_dims = dims.iter().sum::<usize>() as f64 / dims.len() as f64;
    Ok((rate, mean_dims))
}

fn sweep(ch: &ChannelSet, cfg: &SystemConfig, filters: Result<FilterSet>) -> Outcome {
    match filters {
        Ok(f) => cfg.power_grid_db.iter().map(|&p| evaluate(ch, cfg, &f, p).ok()).collect(),
        Err(_) => vec![None; cfg.power_grid_db.len()],
    }
}

fn run_algorithm(spec: &ExperimentSpec, ch: &ChannelSet, algo: Algorithm, trial: u64) -> Result<Outcome> {
    let cfg = &spec.system;
    let tau = cfg.dim_threshold;
    let f0 = algorithms::random_filters(cfg, &mut rng_from_seed(stream_seed(trial, START_STREAM)))?;
    let mut rng = rng_from_seed(stream_seed(trial, algo.stream()));
    Ok(match algo {
        Algorithm::Rcrm => {
            let opts = RcrmOptions {
                orthonormalize_each_round: spec.orthonormalize_each_round,
                ..RcrmOptions::new(spec.budgets.rcrm)
            };
            sweep(ch, cfg, algorithms::rcrm_from(ch, cfg, f0.u.clone(), &opts).map(|t| t.filters))
        }
        Algorithm::LeakageMin => sweep(ch, cfg, algorithms::leakage_min(ch, &f0, spec.budgets.leakage_min, tau).map(|t| t.filters)),
        Algorithm::MaxSinr | Algorithm::MaxSinrQr => cfg
            .power_grid_db
            .iter()
            .map(|&p| {
                let trace = if algo == Algorithm::MaxSinr {
                    algorithms::max_sinr(ch, &f0, spec.budgets.max_sinr, p, cfg.noise_var, tau)
                } else {
                    algorithms::max_sinr_qr(ch, &f0, spec.budgets.max_sinr_qr, p, cfg.noise_var, tau)
                };
                trace.and_then(|t| evaluate(ch, cfg, &t.filters, p)).ok()
            })
            .collect(),
        Algorithm::RandomBfZf => {
            let cc = config::cellular(cfg)?.ok_or_else(|| Error::InvalidConfig("random_bf_zf needs a cellular system".into()))?;
            sweep(ch, cfg, algorithms::random_bf_zf_cellular(ch, &cc, &mut rng))
        }
    })
}

/// Channels of every trial, drawn from the master seed.
pub fn trial_channels(spec: &ExperimentSpec) -> Result<Vec<ChannelSet>> {
    (0..spec.trials as u64)
        .map(|t| {
            let seed = trial_seed(spec.master_seed, t);
            gen_channels(&spec.system, &mut rng_from_seed(stream_seed(seed, CHANNEL_STREAM)))
        })
        .collect()
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    let channels = trial_channels(spec)?;
    run_experiment_on(spec, &channels)
}

/// Runs the experiment on given channels, one trial per channel set.
pub fn run_experiment_on(spec: &ExperimentSpec, channels: &[ChannelSet]) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    if channels.len() != spec.trials {
        return Err(Error::InvalidConfig(format!("{} channel sets for {} trials", channels.len(), spec.trials)));
    }
    let cfg = &spec.system;
    for ch in channels {
        if ch.users != cfg.users || ch.rx_antennas != cfg.rx_antennas || ch.tx_antennas != cfg.tx_antennas {
            return Err(Error::InvalidConfig("loaded channels do not match the configured system".into()));
        }
    }
    let work = |(t, ch): (usize, &ChannelSet)| -> Result<Vec<Outcome>> {
        let seed = trial_seed(spec.master_seed, t as u64);
        spec.algorithms.iter().map(|&a| run_algorithm(spec, ch, a, seed)).collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    // collect keeps trial order, so the reduction below is schedule independent
    let per_trial: Vec<Vec<Outcome>> =
        pool.install(|| channels.par_iter().enumerate().map(work).collect::<Result<Vec<_>>>())?;

    let mut rows = Vec::new();
    for (ai, algo) in spec.algorithms.iter().enumerate() {
        for (pi, &p_db) in cfg.power_grid_db.iter().enumerate() {
            let ok: Vec<(f64, f64)> = per_trial.iter().filter_map(|t| t[ai][pi]).collect();
            let n = ok.len();
            let (mean_rate, std_rate, mean_dims) = if n == 0 {
                (0.0, 0.0, 0.0)
            } else {
                let mean = ok.iter().map(|x| x.0).sum::<f64>() / n as f64;
                let var = if n > 1 { ok.iter().map(|x| (x.0 - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
                (mean, var.sqrt(), ok.iter().map(|x| x.1).sum::<f64>() / n as f64)
            };
            rows.push(ResultRow {
                algorithm: algo.tag().to_string(),
                p_db,
                mean_sum_rate: mean_rate,
                std_sum_rate: std_rate,
                mean_user_dims: mean_dims,
                trials: n,
                failures: spec.trials - n,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ExperimentSpec {
        let mut system = SystemConfig::generic(2, 2, 2, 1);
        system.power_grid_db = vec![0.0, 20.0];
        let mut spec = ExperimentSpec::new(system, vec![Algorithm::Rcrm, Algorithm::LeakageMin, Algorithm::MaxSinr], 3, 7);
        spec.budgets = Budgets { rcrm: 2, leakage_min: 20, max_sinr: 20, max_sinr_qr: 20 };
        spec
    }

    #[test]
    fn rows_cover_algorithms_and_grid() {
        let rows = run_experiment(&toy()).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].algorithm, "rcrm");
        assert_eq!(rows[5].algorithm, "max_sinr");
        for r in &rows {
            assert_eq!(r.trials + r.failures, 3);
            assert!(r.mean_sum_rate >= 0.0);
            assert!((0.0..=1.0).contains(&r.mean_user_dims));
        }
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let mut a = toy();
        a.workers = 1;
        let mut b = toy();
        b.workers = 3;
        assert_eq!(run_experiment(&a).unwrap(), run_experiment(&b).unwrap());
    }

    #[test]
    fn interference_free_channels_give_full_dims() {
        let mut spec = toy();
        spec.trials = 1;
        spec.algorithms = vec![Algorithm::Rcrm];
        let ch = trial_channels(&spec).unwrap().remove(0).without_cross_links();
        let rows = run_experiment_on(&spec, &[ch]).unwrap();
        assert!(rows.iter().all(|r| r.mean_user_dims == 1.0 && r.failures == 0));
    }

    #[test]
    fn failed_trials_are_excluded() {
        let mut spec = toy();
        spec.trials = 2;
        spec.algorithms = vec![Algorithm::Rcrm];
        let mut channels = trial_channels(&spec).unwrap();
        let bad: Vec<Vec<_>> = (0..2)
            .map(|k| (0..2).map(|l| if k == l { crate::numerics::ComplexMatrix::zeros(2, 2) } else { channels[0].get(k, l).clone() }).collect())
            .collect();
        channels[0] = ChannelSet::new(channels[0].kind, bad).unwrap();
        let rows = run_experiment_on(&spec, &channels).unwrap();
        assert!(rows.iter().all(|r| r.trials == 1 && r.failures == 1));
    }

    #[test]
    fn spec_validation() {
        let mut spec = toy();
        spec.algorithms.push(Algorithm::Rcrm);
        assert!(spec.validate().is_err());
        let mut spec = toy();
        spec.budgets.max_sinr = 0;
        assert!(spec.validate().is_err());
    }
}
