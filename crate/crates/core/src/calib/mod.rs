//! Line calibration: fit span attenuation, connector losses, amplifier
//! NF(gain) and the shared gain ripple to carrier-link telemetry.

mod lm;
mod merge;
mod model;
mod simplex;

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dlm::DlmExtract;
use crate::error::{Error, Result};
use crate::gn::ParameterSet;
use crate::line::{AmpMode, AmpSetting, Line, LineSettings, NfCurve, Segment};
use crate::plant::{measure, signal_slots, CombSource, NoiseSpec, OpticalLinePlant, TelemetryRecord};
use crate::spectral::{mean_std, ErrorSplit, SpectralProfile, Unit};

pub use merge::{build_baseline, initial_guess, merge};
use model::{simulate, Layout, SimRecord};

/// Dataset 2 input: carrier-link telemetry across amplifier settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDataset {
    pub comb: CombSource,
    pub records: Vec<TelemetryRecord>,
}

/// How the amplifier settings of a dataset are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetDesign {
    /// Nominal point, then one amplifier at a time over gain and tilt.
    Structured,
    /// Every amplifier drawn independently from the same gain/tilt grid.
    Randomized { seed: u64 },
}

/// Gain offsets from nominal visited by the dataset, dB.
pub const GAIN_OFFSETS_DB: [f64; 7] = [-4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
/// Tilt change applied on the second pass over the gain offsets, dB.
pub const TILT_STEP_DB: f64 = 1.0;
/// Number of records in the default structured dataset.
pub const DEFAULT_RECORDS: usize = 58;

fn gain_amps(line: &Line) -> Vec<(String, AmpSetting)> {
    line.edfas()
        .filter(|e| e.mode == AmpMode::ConstantGainAgc)
        .map(|e| (e.edfa_id.clone(), AmpSetting::from_model(e)))
        .collect()
}

/// Amplifier settings for `n` records over the gain-controlled amplifiers
/// of `line`.
pub fn dataset_settings(line: &Line, n: usize, design: DatasetDesign) -> Vec<LineSettings> {
    let amps = gain_amps(line);
    let nominal = LineSettings::from_line(line);
    let mut out = vec![nominal.clone()];
    match design {
        DatasetDesign::Structured => {
            let mut sweep = Vec::new();
            for (id, s) in &amps {
                for tilt in [0.0, TILT_STEP_DB] {
                    for d in GAIN_OFFSETS_DB {
                        let mut set = nominal.clone();
                        set.set(id.clone(), AmpSetting::gain(s.gain_db + d, s.tilt_db + tilt));
                        sweep.push(set);
                    }
                }
            }
            let mut flat = nominal.clone();
            for (id, s) in &amps {
                flat.set(id.clone(), AmpSetting::gain(s.gain_db, 0.0));
            }
            sweep.push(flat);
            // Larger datasets repeat the sweep with fresh noise.
            out.extend(sweep.iter().cycle().take(n.saturating_sub(1)).cloned());
        }
        DatasetDesign::Randomized { seed } => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            while out.len() < n {
                let mut set = nominal.clone();
                for (id, s) in &amps {
                    let d = if rng.random_bool(0.5) {
                        0.0
                    } else {
                        GAIN_OFFSETS_DB[rng.random_range(0..GAIN_OFFSETS_DB.len())]
                    };
                    let t = if rng.random_bool(0.5) { 0.0 } else { TILT_STEP_DB };
                    set.set(id.clone(), AmpSetting::gain(s.gain_db + d, s.tilt_db + t));
                }
                out.push(set);
            }
        }
    }
    out.truncate(n);
    out
}

/// Measures a calibration dataset on the plant's carrier link.
pub fn collect_dataset(
    plant: &OpticalLinePlant,
    n: usize,
    design: DatasetDesign,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<CalibrationDataset> {
    let settings = dataset_settings(&plant.carrier_link(), n, design);
    let records = settings
        .par_iter()
        .enumerate()
        .map(|(i, s)| measure(plant, &plant.comb, s, noise, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibrationDataset { comb: plant.comb.clone(), records })
}

/// Residual weights, as the standard deviation each observable is trusted to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub spectrum_db: f64,
    pub osnr_db: f64,
    pub photodiode_db: f64,
    /// Tolerance on the span loss implied by the DLM slope, dB.
    pub dlm_db: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { spectrum_db: 0.1, osnr_db: 0.15, photodiode_db: 0.05, dlm_db: 0.05 }
    }
}

/// Cost split along the four error metrics, each averaged over records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub signal_average: f64,
    pub signal_ripple: f64,
    pub osnr_average: f64,
    pub osnr_ripple: f64,
    pub total: f64,
}

/// Per-record errors (measured − simulated) over the signal slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFit {
    pub record: usize,
    pub signal_average_db: f64,
    pub signal_ripple_db: f64,
    pub osnr_average_db: f64,
    pub osnr_ripple_db: f64,
}

fn record_errors(rec: &TelemetryRecord, sim: &SimRecord, slots: &[usize]) -> (ErrorSplit, ErrorSplit) {
    let pick = |v: &[f64]| slots.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let p = ErrorSplit::new(&pick(&rec.rx_spectrum.values), &pick(&sim.rx_dbm));
    let o = ErrorSplit::new(&pick(&rec.rx_osnr.values), &pick(&sim.osnr_db));
    (p, o)
}

fn check_dataset(line: &Line, ds: &CalibrationDataset) -> Result<()> {
    if ds.records.is_empty() {
        return Err(Error::Identifiability("dataset has no records".into()));
    }
    for r in &ds.records {
        line.grid.check_same(&r.rx_spectrum.grid)?;
        line.grid.check_same(&r.rx_osnr.grid)?;
    }
    ds.comb.validate()
}

fn simulate_all(line: &Line, ds: &CalibrationDataset) -> Result<Vec<SimRecord>> {
    ds.records.par_iter().map(|r| simulate(line, &ds.comb, &r.settings)).collect()
}

/// Model-vs-telemetry cost of `params` over the dataset (w_p = w_o = 1).
pub fn cost(params: &ParameterSet, dataset: &CalibrationDataset) -> Result<CostBreakdown> {
    let line = carrier_link_of(&params.line);
    check_dataset(&line, dataset)?;
    let sims = simulate_all(&line, dataset)?;
    Ok(breakdown(dataset, &sims))
}

/// Signed errors of one telemetry record against the carrier link of `params`.
pub fn record_fit(params: &ParameterSet, comb: &CombSource, record: &TelemetryRecord) -> Result<RecordFit> {
    let line = carrier_link_of(&params.line);
    line.grid.check_same(&record.rx_spectrum.grid)?;
    let sim = simulate(&line, comb, &record.settings)?;
    let slots = signal_slots(line.grid.n_channels, &comb.blocked_slots);
    let (p, o) = record_errors(record, &sim, &slots);
    Ok(RecordFit {
        record: 0,
        signal_average_db: p.average,
        signal_ripple_db: p.mean_abs_ripple(),
        osnr_average_db: o.average,
        osnr_ripple_db: o.mean_abs_ripple(),
    })
}

fn breakdown(ds: &CalibrationDataset, sims: &[SimRecord]) -> CostBreakdown {
    let slots = signal_slots(ds.comb.wss_attenuation.grid.n_channels, &ds.comb.blocked_slots);
    let mut c = CostBreakdown::default();
    for (r, s) in ds.records.iter().zip(sims) {
        let (p, o) = record_errors(r, s, &slots);
        c.signal_average += p.average.abs();
        c.signal_ripple += p.mean_abs_ripple();
        c.osnr_average += o.average.abs();
        c.osnr_ripple += o.mean_abs_ripple();
    }
    let n = ds.records.len() as f64;
    c.signal_average /= n;
    c.signal_ripple /= n;
    c.osnr_average /= n;
    c.osnr_ripple /= n;
    c.total = c.signal_average + c.signal_ripple + c.osnr_average + c.osnr_ripple;
    c
}

/// The carrier-link part of a line, or the line itself when it has none.
fn carrier_link_of(line: &Line) -> Line {
    match line.segment_range(Segment::CarrierLink) {
        Some(r) if r.clone().count() < line.elements.len() => line.sub_line(r),
        _ => line.clone(),
    }
}

pub use calibrate::{calibrate, calibrate_with, CalibOptions, CalibResult, StageReport};

mod calibrate;
