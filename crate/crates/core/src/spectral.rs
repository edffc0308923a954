//! Frequency grid, dB/linear conversion and per-channel profile arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Uniform WDM grid. Every per-channel vector in the crate is indexed by slot
/// on one of these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    /// Center of slot 0, Hz.
    pub f_center_first: f64,
    /// Hz.
    pub channel_spacing: f64,
    pub n_channels: usize,
    /// OSNR reference bandwidth, Hz.
    #[serde(default = "default_ref_bandwidth")]
    pub ref_bandwidth: f64,
    /// Transceiver symbol rate, Hz.
    pub symbol_rate: f64,
    /// Two adjacent slots reserved for the 200 GHz DLM channel.
    #[serde(default)]
    pub dlm_slots: Option<[usize; 2]>,
}

fn default_ref_bandwidth() -> f64 {
    12.5e9
}

impl Default for FrequencyGrid {
    /// 40 slots at 100 GHz starting at 191.65 THz, DLM in slots 18/19.
    fn default() -> Self {
        Self {
            f_center_first: 191.65e12,
            channel_spacing: 100e9,
            n_channels: 40,
            ref_bandwidth: 12.5e9,
            symbol_rate: 63.1e9,
            dlm_slots: Some([18, 19]),
        }
    }
}

impl FrequencyGrid {
    pub fn new(f_center_first: f64, channel_spacing: f64, n_channels: usize) -> Result<Self> {
        let g = Self {
            f_center_first,
            channel_spacing,
            n_channels,
            ref_bandwidth: default_ref_bandwidth(),
            symbol_rate: 63.1e9,
            dlm_slots: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 {
            return Err(domain("grid needs at least one channel"));
        }
        if !(self.channel_spacing > 0.0) || !(self.ref_bandwidth > 0.0) || !(self.symbol_rate > 0.0) {
            return Err(domain("grid spacing, reference bandwidth and symbol rate must be > 0"));
        }
        if !(self.f_center_first > 0.0) {
            return Err(domain("first channel frequency must be > 0"));
        }
        if let Some([a, b]) = self.dlm_slots {
            if b != a + 1 || b >= self.n_channels {
                return Err(domain("DLM slots must be two adjacent in-grid indices"));
            }
        }
        Ok(())
    }

    pub fn frequency(&self, slot: usize) -> f64 {
        self.f_center_first + slot as f64 * self.channel_spacing
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_channels).map(|i| self.frequency(i)).collect()
    }

    pub fn f_min(&self) -> f64 {
        self.f_center_first
    }

    pub fn f_max(&self) -> f64 {
        self.frequency(self.n_channels - 1)
    }

    pub fn f_mid(&self) -> f64 {
        0.5 * (self.f_min() + self.f_max())
    }

    /// Position of a slot relative to the band, in [-0.5, 0.5]; 0 for a
    /// single-channel grid.
    pub fn band_position(&self, slot: usize) -> f64 {
        let span = self.f_max() - self.f_min();
        if span == 0.0 {
            0.0
        } else {
            (self.frequency(slot) - self.f_mid()) / span
        }
    }

    /// Total occupied bandwidth.
    pub fn occupied_bandwidth(&self) -> f64 {
        self.n_channels as f64 * self.channel_spacing
    }

    /// Center frequency of the DLM channel, or the band center if none.
    pub fn dlm_frequency(&self) -> f64 {
        match self.dlm_slots {
            Some([a, b]) => 0.5 * (self.frequency(a) + self.frequency(b)),
            None => self.f_mid(),
        }
    }

    /// OSA slot power per unit reference-bandwidth power.
    pub fn slot_to_ref(&self) -> f64 {
        self.channel_spacing / self.ref_bandwidth
    }

    pub fn check_same(&self, other: &FrequencyGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Shape("profiles live on different grids".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Dbm,
    Db,
    LinearMw,
    LinearRatio,
}

impl Unit {
    pub fn is_db(self) -> bool {
        matches!(self, Unit::Dbm | Unit::Db)
    }

    /// The counterpart unit in the other domain.
    pub fn flipped(self) -> Unit {
        match self {
            Unit::Dbm => Unit::LinearMw,
            Unit::Db => Unit::LinearRatio,
            Unit::LinearMw => Unit::Dbm,
            Unit::LinearRatio => Unit::Db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LinearToDb,
    DbToLinear,
}

/// `10·log10(x)` or its inverse. Linear input must be strictly positive.
pub fn db_linear_convert(x: f64, direction: Direction) -> Result<f64> {
    match direction {
        Direction::LinearToDb => {
            if x > 0.0 {
                Ok(10.0 * x.log10())
            } else {
                Err(domain(format!("cannot take dB of non-positive value {x}")))
            }
        }
        Direction::DbToLinear => Ok(db_to_lin(x)),
    }
}

#[inline]
pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Unchecked `10·log10`; zero maps to `-inf`.
#[inline]
pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// One value per grid slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub grid: FrequencyGrid,
    #[serde(with = "crate::serde_float::vec")]
    pub values: Vec<f64>,
    pub unit: Unit,
}

impl SpectralProfile {
    pub fn new(grid: FrequencyGrid, values: Vec<f64>, unit: Unit) -> Result<Self> {
        if values.len() != grid.n_channels {
            return Err(Error::Shape(format!("{} values for a {}-channel grid", values.len(), grid.n_channels)));
        }
        Ok(Self { grid, values, unit })
    }

    pub fn constant(grid: FrequencyGrid, value: f64, unit: Unit) -> Self {
        Self { grid, values: vec![value; grid.n_channels], unit }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same values expressed in the other domain. Fails on non-positive
    /// linear entries.
    pub fn converted(&self) -> Result<Self> {
        let dir = if self.unit.is_db() { Direction::DbToLinear } else { Direction::LinearToDb };
        let values = self.values.iter().map(|&v| db_linear_convert(v, dir)).collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: self.grid, values, unit: self.unit.flipped() })
    }

    pub fn to_db(&self) -> Result<Self> {
        if self.unit.is_db() {
            Ok(self.clone())
        } else {
            self.converted()
        }
    }

    pub fn to_linear(&self) -> Result<Self> {
        if self.unit.is_db() {
            self.converted()
        } else {
            Ok(self.clone())
        }
    }

    /// Values at the given slots.
    pub fn pick(&self, slots: &[usize]) -> Vec<f64> {
        slots.iter().map(|&i| self.values[i]).collect()
    }
}

/// Mean, ripple around the mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileStats {
    pub mean: f64,
    pub ripple: SpectralProfile,
    pub std: f64,
}

/// Statistics computed in the profile's own unit.
pub fn profile_stats(p: &SpectralProfile) -> Result<ProfileStats> {
    if p.is_empty() {
        return Err(domain("statistics of an empty profile"));
    }
    let (mean, std) = mean_std(&p.values);
    let ripple = p.values.iter().map(|v| v - mean).collect();
    Ok(ProfileStats { mean, ripple: SpectralProfile { grid: p.grid, values: ripple, unit: p.unit }, std })
}

/// Population mean and standard deviation of a slice. NaN for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Channelwise `measured - simulated`.
pub fn profile_error(measured: &SpectralProfile, simulated: &SpectralProfile) -> Result<SpectralProfile> {
    measured.grid.check_same(&simulated.grid)?;
    if measured.unit != simulated.unit {
        return Err(Error::Shape(format!("unit mismatch: {:?} vs {:?}", measured.unit, simulated.unit)));
    }
    if measured.len() != simulated.len() {
        return Err(Error::Shape("profile lengths differ".into()));
    }
    let values = measured.values.iter().zip(&simulated.values).map(|(m, s)| m - s).collect();
    Ok(SpectralProfile { grid: measured.grid, values, unit: measured.unit })
}

/// Average/ripple error decomposition over a subset of slots: the error of
/// the averages and the per-slot error of the ripples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSplit {
    pub average: f64,
    #[serde(with = "crate::serde_float::vec")]
    pub ripple: Vec<f64>,
}

impl ErrorSplit {
    pub fn new(measured: &[f64], simulated: &[f64]) -> Self {
        let (mm, _) = mean_std(measured);
        let (ms, _) = mean_std(simulated);
        let ripple = measured.iter().zip(simulated).map(|(m, s)| (m - mm) - (s - ms)).collect();
        Self { average: mm - ms, ripple }
    }

    pub fn mean_abs_ripple(&self) -> f64 {
        self.ripple.iter().map(|r| r.abs()).sum::<f64>() / self.ripple.len() as f64
    }
}
