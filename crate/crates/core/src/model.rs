//! System configurations and random channel generation.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;

/// Generator used for every random draw in the crate.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for trial `index` of an experiment with the given master seed.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(1)))
}

/// Seed of an independent sub-stream (channels, initial filters, ...) of one trial.
pub fn stream_seed(trial: u64, stream: u64) -> u64 {
    mix64(trial.wrapping_add(0xD1B5_4A32_D192_ED03u64.wrapping_mul(stream.wrapping_add(1))))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChannelKind {
    Generic,
    /// `slots` time slots of a single-antenna channel stacked into diagonal matrices.
    DiagonalExtension { slots: usize },
    Cellular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub users: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    /// Streams pursued per user.
    pub streams: usize,
    pub power_grid_db: Vec<f64>,
    /// Linear noise variance.
    pub noise_var: f64,
    /// Lower bound on the minimum eigenvalue of each signal matrix.
    pub eps: f64,
    /// Singular-value cutoff used when counting dimensions.
    pub dim_threshold: f64,
    pub seed: u64,
    pub channel_kind: ChannelKind,
    /// Circularly-symmetric complex entries instead of real ones.
    #[serde(default)]
    pub complex_gaussian: bool,
}

impl SystemConfig {
    /// A generic `(rx x tx, streams)^users` system with the default experiment settings.
    pub fn generic(users: usize, rx_antennas: usize, tx_antennas: usize, streams: usize) -> Self {
        Self {
            users,
            tx_antennas,
            rx_antennas,
            streams,
            power_grid_db: (0..=8).map(|i| 10.0 * i as f64).collect(),
            noise_var: 1.0,
            eps: 0.1,
            dim_threshold: 1e-6,
            seed: 0,
            channel_kind: ChannelKind::Generic,
            complex_gaussian: false,
        }
    }

    pub fn symbol_extension(users: usize, slots: usize, streams: usize) -> Self {
        Self {
            channel_kind: ChannelKind::DiagonalExtension { slots },
            ..Self::generic(users, slots, slots, streams)
        }
    }

    /// `cells` cells with `users_per_cell` single-stream users of `antennas_per_user` each.
    pub fn cellular(cells: usize, users_per_cell: usize, antennas_per_user: usize, rx_antennas: usize) -> Self {
        Self {
            channel_kind: ChannelKind::Cellular,
            ..Self::generic(cells, rx_antennas, users_per_cell * antennas_per_user, users_per_cell)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.users == 0 || self.tx_antennas == 0 || self.rx_antennas == 0 || self.streams == 0 {
            return bad("user, antenna and stream counts must be positive".into());
        }
        if self.streams > self.tx_antennas.min(self.rx_antennas) {
            return bad(format!(
                "streams ({}) exceed min(tx, rx) = {}",
                self.streams,
                self.tx_antennas.min(self.rx_antennas)
            ));
        }
        if !(self.noise_var > 0.0) || !self.noise_var.is_finite() {
            return bad(format!("noise variance must be positive, got {}", self.noise_var));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.dim_threshold > 0.0) {
            return bad(format!("dimension threshold must be positive, got {}", self.dim_threshold));
        }
        if self.power_grid_db.iter().any(|p| !p.is_finite()) {
            return bad("power grid contains a non-finite value".into());
        }
        match self.channel_kind {
            ChannelKind::Generic => {}
            ChannelKind::DiagonalExtension { slots } => {
                if slots < self.streams {
                    return bad(format!("{slots} slots cannot carry {} streams", self.streams));
                }
                if self.tx_antennas != slots || self.rx_antennas != slots {
                    return bad(format!(
                        "a {slots}-slot extension needs {slots} effective antennas on both sides"
                    ));
                }
            }
            ChannelKind::Cellular => {
                CellularConfig::new(self.clone())?;
            }
        }
        Ok(())
    }

    /// `M_r + M_t - d(K+1)`; the system is proper when this is nonnegative.
    pub fn proper_slack(&self) -> i64 {
        self.rx_antennas as i64 + self.tx_antennas as i64 - (self.streams * (self.users + 1)) as i64
    }

    /// Linear per-stream power `10^(P/10) / d`.
    pub fn column_power(&self, p_db: f64) -> f64 {
        10f64.powf(p_db / 10.0) / self.streams as f64
    }
}

pub fn is_proper(cfg: &SystemConfig) -> bool {
    cfg.proper_slack() >= 0
}

/// Cellular system: each of the `users` cells serves `streams` single-stream users.
#[derive(Clone, Debug, PartialEq)]
pub struct CellularConfig {
    system: SystemConfig,
}

impl CellularConfig {
    pub fn new(mut system: SystemConfig) -> Result<Self> {
        system.channel_kind = ChannelKind::Cellular;
        if system.streams == 0 || system.tx_antennas % system.streams != 0 {
            return Err(Error::InvalidConfig(format!(
                "tx antennas per cell ({}) must divide evenly among {} users",
                system.tx_antennas, system.streams
            )));
        }
        Ok(Self { system })
    }

    pub fn system(&self) -> &SystemConfig {
        &self.system
    }

    pub fn users_per_cell(&self) -> usize {
        self.system.streams
    }

    pub fn per_user_antennas(&self) -> usize {
        self.system.tx_antennas / self.system.streams
    }

    /// Rows of `V_k` that user `u` of a cell may occupy.
    pub fn user_rows(&self, u: usize) -> std::ops::Range<usize> {
        let n = self.per_user_antennas();
        u * n..(u + 1) * n
    }
}

/// The `K x K` grid of channel matrices, `h[k][l]` from transmitter `l` to receiver `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub users: usize,
    pub rx_antennas: usize,
    pub tx_antennas: usize,
    pub kind: ChannelKind,
    h: Vec<Vec<ComplexMatrix>>,
}

impl ChannelSet {
    pub fn new(kind: ChannelKind, h: Vec<Vec<ComplexMatrix>>) -> Result<Self> {
        let users = h.len();
        if users == 0 || h.iter().any(|row| row.len() != users) {
            return Err(Error::contract("channel grid must be square and non-empty"));
        }
        let (rx, tx) = h[0][0].shape();
        for (k, row) in h.iter().enumerate() {
            for (l, m) in row.iter().enumerate() {
                if m.shape() != (rx, tx) {
                    return Err(Error::contract(format!(
                        "H[{k}][{l}] is {}x{}, expected {rx}x{tx}",
                        m.rows(),
                        m.cols()
                    )));
                }
                if matches!(kind, ChannelKind::DiagonalExtension { .. }) && !m.is_diagonal(1e-15) {
                    return Err(Error::contract(format!("H[{k}][{l}] is not diagonal")));
                }
            }
        }
        Ok(Self {
            users,
            rx_antennas: rx,
            tx_antennas: tx,
            kind,
            h,
        })
    }

    /// Channel from transmitter `l` to receiver `k`.
    pub fn get(&self, k: usize, l: usize) -> &ComplexMatrix {
        &self.h[k][l]
    }

    pub fn scaled(&self, c: f64) -> Self {
        let h = self
            .h
            .iter()
            .map(|row| row.iter().map(|m| m.scale(c)).collect())
            .collect();
        Self { h, ..self.clone() }
    }

    /// Keeps the direct links and zeroes every cross link.
    pub fn without_cross_links(&self) -> Self {
        let h = (0..self.users)
            .map(|k| {
                (0..self.users)
                    .map(|l| {
                        if k == l {
                            self.h[k][l].clone()
                        } else {
                            ComplexMatrix::zeros(self.rx_antennas, self.tx_antennas)
                        }
                    })
                    .collect()
            })
            .collect();
        Self { h, ..self.clone() }
    }

    /// Block `H^{(u)}_{k,l}`: the columns of `H[k][l]` belonging to user `u` of cell `l`.
    pub fn cellular_block(&self, cfg: &CellularConfig, k: usize, l: usize, u: usize) -> ComplexMatrix {
        let n = cfg.per_user_antennas();
        self.h[k][l].columns(u * n, n)
    }

    pub fn total_energy(&self) -> f64 {
        self.h.iter().flatten().map(|m| m.frobenius_norm().powi(2)).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ChannelDoc::from(self)).expect("channel documents always serialize")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let doc: ChannelDoc = serde_json::from_str(text).map_err(|e| e.to_string())?;
        doc.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|detail| Error::Parse {
            path: path.into(),
            detail,
        })
    }
}

/// On-disk form: `matrices[k][l]` is the row-major list of `[re, im]` pairs of `H[k][l]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelDoc {
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "M_r")]
    pub rx_antennas: usize,
    #[serde(rename = "M_t")]
    pub tx_antennas: usize,
    pub kind: ChannelKind,
    pub matrices: Vec<Vec<Vec<[f64; 2]>>>,
}

impl From<&ChannelSet> for ChannelDoc {
    fn from(ch: &ChannelSet) -> Self {
        let matrices = ch
            .h
            .iter()
            .map(|row| {
                row.iter()
                    .map(|m| m.row_major().iter().map(|z| [z.re, z.im]).collect())
                    .collect()
            })
            .collect();
        Self {
            users: ch.users,
            rx_antennas: ch.rx_antennas,
            tx_antennas: ch.tx_antennas,
            kind: ch.kind,
            matrices,
        }
    }
}

impl TryFrom<ChannelDoc> for ChannelSet {
    type Error = String;

    fn try_from(doc: ChannelDoc) -> std::result::Result<Self, String> {
        if doc.matrices.len() != doc.users {
            return Err(format!("expected {} matrix rows, found {}", doc.users, doc.matrices.len()));
        }
        let mut h = Vec::with_capacity(doc.users);
        for row in &doc.matrices {
            if row.len() != doc.users {
                return Err(format!("expected {} matrices per row, found {}", doc.users, row.len()));
            }
            let mut out = Vec::with_capacity(doc.users);
            for data in row {
                let entries: Vec<Complex64> = data.iter().map(|p| Complex64::new(p[0], p[1])).collect();
                out.push(
                    ComplexMatrix::from_row_major(doc.rx_antennas, doc.tx_antennas, &entries)
                        .map_err(|e| e.to_string())?,
                );
            }
            h.push(out);
        }
        ChannelSet::new(doc.kind, h).map_err(|e| e.to_string())
    }
}

fn gaussian_entry(rng: &mut impl Rng, complex: bool) -> Complex64 {
    if complex {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(s * re, s * im)
    } else {
        Complex64::new(StandardNormal.sample(rng), 0.0)
    }
}

pub fn gaussian_matrix(rows: usize, cols: usize, complex: bool, rng: &mut impl Rng) -> ComplexMatrix {
    // Row-major draw order so the stream layout does not depend on storage order.
    let mut m = ComplexMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m.set(i, j, gaussian_entry(rng, complex));
        }
    }
    m
}

/// i.i.d. Gaussian `M_r x M_t` channels for a generic system.
pub fn gen_iid_channels(cfg: &SystemConfig, rng: &mut impl Rng) -> Result<ChannelSet> {
    if cfg.channel_kind != ChannelKind::Generic {
        return Err(Error::InvalidConfig("i.i.d. generation needs a generic system".into()));
    }
    cfg.validate()?;
    let h = (0..cfg.users)
        .map(|_| {
            (0..cfg.users)
                .map(|_| gaussian_matrix(cfg.rx_antennas, cfg.tx_antennas, cfg.complex_gaussian, rng))
                .collect()
        })
        .collect();
    ChannelSet::new(ChannelKind::Generic, h)
}

/// Diagonal `T x T` channels stacking `T` slots of a single-antenna network.
pub fn gen_symbol_extension_channels(cfg: &SystemConfig, slots: usize, rng: &mut impl Rng) -> Result<ChannelSet> {
    if slots < cfg.streams || slots == 0 {
        return Err(Error::InvalidConfig(format!(
            "{slots} slots cannot carry {} streams",
            cfg.streams
        )));
    }
    let h = (0..cfg.users)
        .map(|_| {
            (0..cfg.users)
                .map(|_| {
                    let mut m = ComplexMatrix::zeros(slots, slots);
                    for t in 0..slots {
                        m.set(t, t, gaussian_entry(rng, cfg.complex_gaussian));
                    }
                    m
                })
                .collect()
        })
        .collect();
    ChannelSet::new(ChannelKind::DiagonalExtension { slots }, h)
}

/// Cellular channels: `H[k][l]` concatenates one `M_r x (M_t/d)` block per user of cell `l`.
pub fn gen_cellular_channels(cfg: &CellularConfig, rng: &mut impl Rng) -> Result<ChannelSet> {
    let sys = cfg.system();
    sys.validate()?;
    let n = cfg.per_user_antennas();
    let h = (0..sys.users)
        .map(|_| {
            (0..sys.users)
                .map(|_| {
                    let blocks: Vec<ComplexMatrix> = (0..cfg.users_per_cell())
                        .map(|_| gaussian_matrix(sys.rx_antennas, n, sys.complex_gaussian, rng))
                        .collect();
                    let refs: Vec<&ComplexMatrix> = blocks.iter().collect();
                    ComplexMatrix::hcat(sys.rx_antennas, &refs)
                })
                .collect()
        })
        .collect();
    ChannelSet::new(ChannelKind::Cellular, h)
}

/// Draws channels of whatever family the configuration names.
pub fn gen_channels(cfg: &SystemConfig, rng: &mut impl Rng) -> Result<ChannelSet> {
    match cfg.channel_kind {
        ChannelKind::Generic => gen_iid_channels(cfg, rng),
        ChannelKind::DiagonalExtension { slots } => {
            cfg.validate()?;
            gen_symbol_extension_channels(cfg, slots, rng)
        }
        ChannelKind::Cellular => gen_cellular_channels(&CellularConfig::new(cfg.clone())?, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iid_shapes_and_determinism() {
        let cfg = SystemConfig::generic(3, 4, 8, 1);
        let a = gen_iid_channels(&cfg, &mut rng_from_seed(7)).unwrap();
        let b = gen_iid_channels(&cfg, &mut rng_from_seed(7)).unwrap();
        assert_eq!(a, b);
        for k in 0..3 {
            for l in 0..3 {
                assert_eq!(a.get(k, l).shape(), (4, 8));
                assert!(a.get(k, l).row_major().iter().all(|z| z.im == 0.0));
            }
        }
        let c = gen_iid_channels(&cfg, &mut rng_from_seed(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn iid_entry_statistics() {
        let cfg = SystemConfig::generic(5, 50, 50, 1);
        let mut rng = rng_from_seed(11);
        let mut xs = Vec::new();
        while xs.len() < 100_000 {
            let ch = gen_iid_channels(&cfg, &mut rng).unwrap();
            for k in 0..5 {
                for l in 0..5 {
                    xs.extend(ch.get(k, l).row_major().iter().map(|z| z.re));
                }
            }
        }
        xs.truncate(100_000);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "variance {var}");
    }

    #[test]
    fn complex_gaussian_has_unit_variance() {
        let mut cfg = SystemConfig::generic(4, 40, 40, 1);
        cfg.complex_gaussian = true;
        let ch = gen_iid_channels(&cfg, &mut rng_from_seed(5)).unwrap();
        let energy = ch.total_energy() / (16.0 * 1600.0);
        assert!((energy - 1.0).abs() < 0.03, "{energy}");
    }

    #[test]
    fn symbol_extension_is_diagonal() {
        let cfg = SystemConfig::symbol_extension(3, 2, 1);
        let ch = gen_symbol_extension_channels(&cfg, 2, &mut rng_from_seed(3)).unwrap();
        for k in 0..3 {
            for l in 0..3 {
                let m = ch.get(k, l);
                assert_eq!(m.shape(), (2, 2));
                assert_eq!(m.get(0, 1), Complex64::new(0.0, 0.0));
                assert_eq!(m.get(1, 0), Complex64::new(0.0, 0.0));
                let d = ComplexMatrix::diag_real(&[0.3, -1.7]);
                assert!((&(m * &d) - &(&d * m)).max_abs() == 0.0);
            }
        }
        let again = gen_symbol_extension_channels(&cfg, 2, &mut rng_from_seed(3)).unwrap();
        assert_eq!(ch, again);
        assert!(gen_symbol_extension_channels(&SystemConfig::generic(3, 2, 2, 2), 1, &mut rng_from_seed(3)).is_err());
    }

    #[test]
    fn cellular_blocks_partition_channels() {
        let cfg = CellularConfig::new(SystemConfig::cellular(3, 2, 3, 4)).unwrap();
        let ch = gen_cellular_channels(&cfg, &mut rng_from_seed(9)).unwrap();
        assert_eq!(ch.get(0, 1).shape(), (4, 6));
        for k in 0..3 {
            for l in 0..3 {
                let b0 = ch.cellular_block(&cfg, k, l, 0);
                let b1 = ch.cellular_block(&cfg, k, l, 1);
                assert_eq!(b0.shape(), (4, 3));
                assert_eq!(&ComplexMatrix::hcat(4, &[&b0, &b1]), ch.get(k, l));
            }
        }
        assert_eq!(ch, gen_cellular_channels(&cfg, &mut rng_from_seed(9)).unwrap());
        assert!(CellularConfig::new(SystemConfig::generic(3, 4, 5, 2)).is_err());
    }

    #[test]
    fn proper_condition() {
        assert!(is_proper(&SystemConfig::generic(3, 4, 8, 3)));
        assert_eq!(SystemConfig::generic(3, 4, 8, 3).proper_slack(), 0);
        assert!(is_proper(&SystemConfig::generic(3, 6, 6, 3)));
        assert!(!is_proper(&SystemConfig::generic(4, 2, 2, 1)));
        assert_eq!(SystemConfig::generic(4, 2, 2, 1).proper_slack(), -1);
    }

    #[test]
    fn validation() {
        assert!(SystemConfig::generic(3, 2, 8, 3).validate().is_err());
        let mut c = SystemConfig::generic(3, 4, 8, 1);
        c.eps = 0.0;
        assert!(c.validate().is_err());
        assert!(SystemConfig::symbol_extension(3, 2, 1).validate().is_ok());
    }

    #[test]
    fn channel_json_round_trip() {
        let cfg = SystemConfig::generic(2, 2, 3, 1);
        let ch = gen_iid_channels(&cfg, &mut rng_from_seed(1)).unwrap();
        let text = ch.to_json();
        assert!(text.contains("\"M_r\":2"));
        assert_eq!(ChannelSet::from_json(&text).unwrap(), ch);
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| trial_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(trial_seed(42, 3), trial_seed(42, 3));
    }
}
