//! Ground-truth plant: a [`Line`] with hidden true parameters plus the
//! instruments that observe it (OSAs, amplifier photodiodes, the DLM channel
//! and the transceivers).

pub mod file;
pub mod osa;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gn::{propagate, LineState, Propagation};
use crate::line::{AmpSetting, Element, Line, LineSettings, Segment};
use crate::qot::{ber_from_snr, combine_snr, TransceiverModel};
use crate::spectral::{db_to_lin, lin_to_db, FrequencyGrid, SpectralProfile, Unit};

pub use osa::{hole_osnr, signal_slots, OSA_FLOOR_DBM};

/// ASE source shaped by a WSS; feeds the carrier link during calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombSource {
    pub ase_psd_dbm_per_slot: f64,
    /// Per-slot WSS attenuation, dB.
    pub wss_attenuation: SpectralProfile,
    pub blocked_slots: Vec<usize>,
}

impl CombSource {
    pub fn flat(grid: FrequencyGrid, psd_dbm_per_slot: f64, blocked_slots: Vec<usize>) -> Self {
        Self {
            ase_psd_dbm_per_slot: psd_dbm_per_slot,
            wss_attenuation: SpectralProfile::constant(grid, 0.0, Unit::Db),
            blocked_slots,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.wss_attenuation.values.iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::Plant("WSS attenuation must be non-negative".into()));
        }
        if let Some(&b) = self.blocked_slots.iter().find(|&&b| b >= self.wss_attenuation.len()) {
            return Err(Error::Plant(format!("blocked slot {b} outside grid")));
        }
        Ok(())
    }

    /// Launched per-slot power in dBm; blocked slots are `-inf`.
    pub fn launch_dbm(&self) -> Vec<f64> {
        self.wss_attenuation
            .values
            .iter()
            .enumerate()
            .map(
                |(i, a)| {
                    if self.blocked_slots.contains(&i) {
                        f64::NEG_INFINITY
                    } else {
                        self.ase_psd_dbm_per_slot - a
                    }
                },
            )
            .collect()
    }

    /// What the transmit-side OSA displays (blocked slots at the floor).
    pub fn osa_dbm(&self) -> Vec<f64> {
        self.launch_dbm().into_iter().map(|v| if v.is_finite() { v } else { OSA_FLOOR_DBM }).collect()
    }
}

/// Measurement noise, all additive Gaussian in dB (standard deviations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub spectrum_db: f64,
    pub photodiode_db: f64,
    pub dlm_db: f64,
    /// Per-reading jitter on the end-to-end SNR a transceiver reports.
    pub q_db: f64,
    /// OSNR jitter on back-to-back calibration points.
    pub b2b_osnr_db: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { spectrum_db: 0.1, photodiode_db: 0.05, dlm_db: 0.15, q_db: 0.03, b2b_osnr_db: 0.1 }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self { spectrum_db: 0.0, photodiode_db: 0.0, dlm_db: 0.0, q_db: 0.0, b2b_osnr_db: 0.0 }
    }
}

/// DLM acquisition parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DlmConfig {
    pub step_km: f64,
    /// Standard deviation of the Gaussian spatial-resolution kernel.
    pub sigma_z_km: f64,
    /// Constant output power every amplifier is set to during the DLM run.
    pub power_dbm: f64,
    /// Relative jitter on the per-span accumulated dispersion the DLM reports.
    pub cd_jitter_rel: f64,
}

impl Default for DlmConfig {
    fn default() -> Self {
        Self { step_km: 0.2, sigma_z_km: 1.0, power_dbm: 12.0, cd_jitter_rel: 0.01 }
    }
}

/// Gaussian dB noise source; σ = 0 draws nothing.
pub(crate) struct DbNoise {
    rng: ChaCha8Rng,
}

impl DbNoise {
    pub(crate) fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub(crate) fn draw(&mut self, sigma: f64) -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("finite sigma").sample(&mut self.rng)
        } else {
            0.0
        }
    }
}

/// One snapshot of carrier-link telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub settings: LineSettings,
    pub edfa_pin_dbm: BTreeMap<String, f64>,
    pub edfa_pout_dbm: BTreeMap<String, f64>,
    pub tx_spectrum: SpectralProfile,
    pub rx_spectrum: SpectralProfile,
    pub rx_osnr: SpectralProfile,
    pub blocked_slots: Vec<usize>,
    #[serde(default)]
    pub saturated: Vec<String>,
    pub noise_seed: u64,
}

/// One end-to-end transceiver reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QReading {
    pub trx_id: String,
    pub slot: usize,
    pub snr_db: f64,
    pub ber: f64,
}

/// The field: true line parameters and the instruments around them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalLinePlant {
    pub name: String,
    pub line: Line,
    pub transceivers: Vec<TransceiverModel>,
    pub comb: CombSource,
    /// Total launch power of the loaded end-to-end spectrum, dBm.
    pub ete_launch_total_dbm: f64,
    pub noise: NoiseSpec,
    pub dlm: DlmConfig,
}

impl OpticalLinePlant {
    pub fn validate(&self) -> Result<()> {
        self.line.validate()?;
        self.comb.validate()?;
        let n = self.line.grid.n_channels;
        for t in &self.transceivers {
            if t.slot >= n {
                return Err(Error::Plant(format!("transceiver {} on slot {} outside grid", t.trx_id, t.slot)));
            }
        }
        for seg in [Segment::Aal1, Segment::CarrierLink, Segment::Aal2] {
            if self.line.segment_range(seg).is_none() {
                return Err(Error::Plant(format!("segment {seg:?} is empty")));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> FrequencyGrid {
        self.line.grid
    }

    /// The carrier link on its own, the domain of calibration telemetry.
    pub fn carrier_link(&self) -> Line {
        let r = self.line.segment_range(Segment::CarrierLink).expect("validated plant");
        self.line.sub_line(r)
    }

    /// Flat end-to-end launch, dBm per slot.
    pub fn ete_launch(&self) -> SpectralProfile {
        let grid = self.grid();
        let per_slot = self.ete_launch_total_dbm - lin_to_db(grid.n_channels as f64);
        SpectralProfile::constant(grid, per_slot, Unit::Dbm)
    }

    /// The amplifier operating points stored in the plant description.
    pub fn nominal_settings(&self) -> LineSettings {
        LineSettings::from_line(&self.line)
    }
}

/// Noise-free propagation through the whole plant.
pub fn propagate_true(
    plant: &OpticalLinePlant,
    input: &SpectralProfile,
    settings: &LineSettings,
) -> Result<Propagation> {
    plant.grid().check_same(&input.grid)?;
    propagate(&plant.line, &LineState::from_profile(input)?, settings)
}

/// Carrier-link telemetry for one setting of the amplifiers.
pub fn measure(
    plant: &OpticalLinePlant,
    comb: &CombSource,
    settings: &LineSettings,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<TelemetryRecord> {
    measure_line(&plant.carrier_link(), comb, settings, noise, seed)
}

/// Comb-fed telemetry of an arbitrary line.
pub fn measure_line(
    line: &Line,
    comb: &CombSource,
    settings: &LineSettings,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<TelemetryRecord> {
    comb.validate()?;
    let grid = line.grid;
    grid.check_same(&comb.wss_attenuation.grid)?;
    let prop = propagate(line, &LineState::from_dbm(&comb.launch_dbm()), settings)?;
    let mut rng = DbNoise::new(seed);
    let mut pin = BTreeMap::new();
    let mut pout = BTreeMap::new();
    let mut saturated = Vec::new();
    for stage in &prop.stages {
        if stage.realized_gain_db.is_some() {
            pin.insert(stage.element_id.clone(), stage.input_total_dbm + rng.draw(noise.photodiode_db));
            pout.insert(stage.element_id.clone(), stage.output_total_dbm + rng.draw(noise.photodiode_db));
            if stage.saturated {
                saturated.push(stage.element_id.clone());
            }
        }
    }
    let tx: Vec<f64> = comb.osa_dbm().into_iter().map(|v| v + rng.draw(noise.spectrum_db)).collect();
    let rx: Vec<f64> = prop.output().osa_dbm(&grid).into_iter().map(|v| v + rng.draw(noise.spectrum_db)).collect();
    let osnr = hole_osnr(&rx, &comb.blocked_slots, &grid);
    Ok(TelemetryRecord {
        settings: settings.clone(),
        edfa_pin_dbm: pin,
        edfa_pout_dbm: pout,
        tx_spectrum: SpectralProfile { grid, values: tx, unit: Unit::Dbm },
        rx_spectrum: SpectralProfile { grid, values: rx, unit: Unit::Dbm },
        rx_osnr: SpectralProfile { grid, values: osnr, unit: Unit::Db },
        blocked_slots: comb.blocked_slots.clone(),
        saturated,
        noise_seed: seed,
    })
}

/// Settings used for the DLM acquisition: every amplifier in constant output
/// power at the DLM level, tilt as stored.
pub fn dlm_settings(plant: &OpticalLinePlant) -> LineSettings {
    let mut s = LineSettings::default();
    for e in plant.line.edfas() {
        s.set(e.edfa_id.clone(), AmpSetting::power(plant.dlm.power_dbm, e.tilt_db));
    }
    s
}

/// Sampled longitudinal profile `10·log10(γ(z)·P(z))`, γ in 1/(W·km) and P
/// the total power in W, along the full end-to-end path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlmProfile {
    pub z_km: Vec<f64>,
    pub gamma_p_db: Vec<f64>,
    pub resolution_km: f64,
}

impl DlmProfile {
    pub fn validate(&self) -> Result<()> {
        if self.z_km.len() != self.gamma_p_db.len() {
            return Err(Error::Shape("DLM z and value vectors differ in length".into()));
        }
        if self.z_km.len() < 2 {
            return Err(Error::Shape("DLM profile needs at least two samples".into()));
        }
        let dz = self.z_km[1] - self.z_km[0];
        if !(dz > 0.0) || self.z_km.windows(2).any(|w| ((w[1] - w[0]) - dz).abs() > 1e-6 * dz.max(1.0)) {
            return Err(Error::Shape("DLM z grid must be uniform and increasing".into()));
        }
        Ok(())
    }

    pub fn step_km(&self) -> f64 {
        self.z_km[1] - self.z_km[0]
    }
}

/// Exact profile under DLM settings, without kernel or noise. Samples every
/// `step_km` from 0 to the total fiber length.
pub fn dlm_truth(plant: &OpticalLinePlant, step_km: f64) -> Result<DlmProfile> {
    let (total, at) = exact_profile(plant)?;
    let n = (total / step_km).floor() as usize + 1;
    let z_km: Vec<f64> = (0..n).map(|j| (j as f64 * step_km).min(total)).collect();
    let gamma_p_db = z_km.iter().map(|&z| at(z)).collect();
    Ok(DlmProfile { z_km, gamma_p_db, resolution_km: 0.0 })
}

/// Line length and the exact γ·P profile in dB as a function of position.
fn exact_profile(plant: &OpticalLinePlant) -> Result<(f64, impl Fn(f64) -> f64 + '_)> {
    let line = &plant.line;
    let grid = line.grid;
    let prop = propagate_true(plant, &plant.ete_launch(), &dlm_settings(plant))?;
    let f = grid.dlm_frequency();
    // (start z, span, total power in mW at the span input)
    let mut pieces = Vec::new();
    let mut z0 = 0.0;
    for (k, t) in line.elements.iter().enumerate() {
        if let Element::Span(s) = &t.element {
            let p_in = if k == 0 { prop.input.total_mw(&grid) } else { prop.stages[k - 1].state.total_mw(&grid) };
            pieces.push((z0, s, p_in));
            z0 += s.length_km;
        }
    }
    let total = z0;
    let at = move |z: f64| {
        let z = z.clamp(0.0, total);
        let idx = pieces.partition_point(|p| p.0 <= z).saturating_sub(1);
        let (start, span, p_in) = pieces[idx];
        let local = (z - start).min(span.length_km);
        let p_w = p_in * 1e-3 * db_to_lin(-span.loss_to(local, f));
        lin_to_db(span.gamma_w_km * p_w)
    };
    Ok((total, at))
}

/// Gaussian smoothing in the dB domain, kernel renormalized at the ends.
pub fn smooth_db(values: &[f64], step_km: f64, sigma_km: f64) -> Vec<f64> {
    if !(sigma_km > 0.0) {
        return values.to_vec();
    }
    let s = sigma_km / step_km;
    let half = (4.0 * s).ceil() as isize;
    let w: Vec<f64> = (-half..=half).map(|k| (-0.5 * (k as f64 / s).powi(2)).exp()).collect();
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for k in -half..=half {
                let j = i + k;
                if (0..n).contains(&j) {
                    let wk = w[(k + half) as usize];
                    acc += wk * values[j as usize];
                    norm += wk;
                }
            }
            acc / norm
        })
        .collect()
}

/// Oversampling of the exact profile before the kernel is applied, so steps
/// between output samples keep their true position.
const DLM_OVERSAMPLE: usize = 10;

/// DLM acquisition: exact profile, spatial kernel, then additive dB noise.
pub fn dlm_measure(plant: &OpticalLinePlant, noise: &NoiseSpec, seed: u64) -> Result<DlmProfile> {
    let cfg = plant.dlm;
    let coarse = dlm_truth(plant, cfg.step_km)?;
    let fine_step = cfg.step_km / DLM_OVERSAMPLE as f64;
    let (total, at) = exact_profile(plant)?;
    // Each fine sample averages its cell, so a step on a sample sits midway.
    let fine: Vec<f64> = (0..=(total / fine_step).floor() as usize)
        .map(|i| {
            let z = i as f64 * fine_step;
            0.5 * (at(z - 0.25 * fine_step) + at(z + 0.25 * fine_step))
        })
        .collect();
    let smoothed = smooth_db(&fine, fine_step, cfg.sigma_z_km);
    let mut rng = DbNoise::new(seed);
    let vals = (0..coarse.z_km.len())
        .map(|j| smoothed[(j * DLM_OVERSAMPLE).min(smoothed.len() - 1)] + rng.draw(noise.dlm_db))
        .collect();
    Ok(DlmProfile { z_km: coarse.z_km, gamma_p_db: vals, resolution_km: cfg.sigma_z_km })
}

/// Accumulated dispersion per span (ps/nm) as reported alongside the DLM
/// profile. Jitter is skipped when the DLM noise is zero.
pub fn dlm_cd_report(plant: &OpticalLinePlant, noise: &NoiseSpec, seed: u64) -> Vec<f64> {
    let mut rng = DbNoise::new(seed ^ 0xcd);
    let rel = if noise.dlm_db > 0.0 { plant.dlm.cd_jitter_rel } else { 0.0 };
    plant.line.spans().map(|s| s.dispersion_ps_nm_km * s.length_km * (1.0 + rng.draw(rel))).collect()
}

/// Photodiode reading of the power entering each span during the DLM run:
/// the preceding amplifier output, or the end-to-end launch for the first
/// element.
pub fn dlm_launch_report(plant: &OpticalLinePlant, noise: &NoiseSpec, seed: u64) -> Result<Vec<f64>> {
    let prop = propagate_true(plant, &plant.ete_launch(), &dlm_settings(plant))?;
    let mut rng = DbNoise::new(seed ^ 0x1a);
    let launch = prop.input.total_dbm(&plant.grid());
    let mut out = Vec::new();
    for (i, t) in plant.line.elements.iter().enumerate() {
        if t.element.as_span().is_some() {
            let before = if i == 0 { launch } else { prop.stages[i - 1].output_total_dbm };
            out.push(before + rng.draw(noise.photodiode_db));
        }
    }
    Ok(out)
}

/// Span losses read from amplifier photodiodes with the end-to-end launch
/// at `settings`. A span must sit between amplifiers or the line ends.
pub fn span_loss_report(
    plant: &OpticalLinePlant,
    settings: &LineSettings,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let prop = propagate_true(plant, &plant.ete_launch(), settings)?;
    let grid = plant.grid();
    let mut rng = DbNoise::new(seed);
    let els = &plant.line.elements;
    let mut out = BTreeMap::new();
    for (i, t) in els.iter().enumerate() {
        let Some(span) = t.element.as_span() else { continue };
        let before = if i == 0 {
            prop.input.total_dbm(&grid)
        } else if els[i - 1].element.as_edfa().is_some() {
            prop.stages[i - 1].output_total_dbm
        } else {
            return Err(Error::Plant(format!("span {}: no photodiode before it", span.span_id)));
        };
        let after = if i + 1 == els.len() || els[i + 1].element.as_edfa().is_some() {
            prop.stages[i].output_total_dbm
        } else {
            return Err(Error::Plant(format!("span {}: no photodiode after it", span.span_id)));
        };
        let loss = before - after + rng.draw(noise.photodiode_db) - rng.draw(noise.photodiode_db);
        out.insert(span.span_id.clone(), loss);
    }
    Ok(out)
}

/// Noise-free end-to-end SNR (dB) of each transceiver for a flat launch.
pub fn ete_snr_true(plant: &OpticalLinePlant, settings: &LineSettings) -> Result<Vec<f64>> {
    let prop = propagate_true(plant, &plant.ete_launch(), settings)?;
    let grid = plant.grid();
    let out = prop.output();
    let bw = grid.symbol_rate / grid.ref_bandwidth;
    Ok(plant
        .transceivers
        .iter()
        .map(|t| {
            let i = t.slot;
            let gsnr = lin_to_db(out.signal[i] / ((out.ase[i] + out.nli[i]) * bw));
            combine_snr(&[t.snr_trx_db, gsnr])
        })
        .collect())
}

/// End-to-end readings of every transceiver, with per-reading jitter.
pub fn measure_q(
    plant: &OpticalLinePlant,
    settings: &LineSettings,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Vec<QReading>> {
    let snr = ete_snr_true(plant, settings)?;
    let mut rng = DbNoise::new(seed);
    plant
        .transceivers
        .iter()
        .zip(snr)
        .map(|(t, s)| {
            let snr_db = s + rng.draw(noise.q_db);
            Ok(QReading { trx_id: t.trx_id.clone(), slot: t.slot, snr_db, ber: ber_from_snr(db_to_lin(snr_db), t.mf)? })
        })
        .collect()
}

/// OSNR points of the back-to-back sweep, dB / 0.1 nm.
pub const B2B_OSNR_DB: [f64; 9] = [14.0, 16.0, 18.0, 20.0, 22.0, 24.0, 26.0, 28.0, 30.0];

/// Back-to-back BER-vs-OSNR curve of one transceiver with OSNR-setting jitter.
pub fn b2b_curve(
    plant: &OpticalLinePlant,
    trx: &TransceiverModel,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let grid = plant.grid();
    let to_snr = lin_to_db(grid.ref_bandwidth / trx.symbol_rate);
    let mut rng = DbNoise::new(seed);
    B2B_OSNR_DB
        .iter()
        .map(|&osnr| {
            let actual = osnr + rng.draw(noise.b2b_osnr_db);
            let snr = combine_snr(&[trx.snr_trx_db, actual + to_snr]);
            Ok((osnr, ber_from_snr(db_to_lin(snr), trx.mf)?))
        })
        .collect()
}

/// Plant file of the bundled example.
pub const EXAMPLE_PLANT: &str = include_str!("../../plants/example_line.plant");

/// The bundled example plant: two access links around a three-span
/// carrier link.
pub fn example_plant() -> OpticalLinePlant {
    file::parse_plant(EXAMPLE_PLANT).expect("bundled plant parses")
}
