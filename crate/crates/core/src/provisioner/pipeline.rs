//! Measurement and computation steps of a run, usable on their own.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calib::{
    build_baseline, calibrate_with, collect_dataset, initial_guess, merge, CalibOptions, CalibResult,
    CalibrationDataset, DatasetDesign,
};
use crate::dlm::{extract_line, DlmExtract};
use crate::error::Result;
use crate::gn::ParameterSet;
use crate::plant::{
    b2b_curve, dlm_cd_report, dlm_launch_report, dlm_measure, span_loss_report, DlmProfile, NoiseSpec, OpticalLinePlant,
};
use crate::qot::{fit_b2b, TransceiverModel};

/// Raw DLM acquisition: the longitudinal profile plus the per-span CD and
/// launch power the instrument reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlmAcquisition {
    pub profile: DlmProfile,
    pub cd_ps_nm: Vec<f64>,
    pub launch_dbm: Vec<f64>,
}

impl DlmAcquisition {
    pub fn measure(plant: &OpticalLinePlant, noise: &NoiseSpec, seed: u64) -> Result<Self> {
        Ok(Self {
            profile: dlm_measure(plant, noise, seed)?,
            cd_ps_nm: dlm_cd_report(plant, noise, seed),
            launch_dbm: dlm_launch_report(plant, noise, seed)?,
        })
    }

    /// Dataset 1: per-span parameters extracted from the acquisition.
    pub fn extract(&self, plant: &OpticalLinePlant) -> Result<DlmExtract> {
        extract_line(&self.profile, &plant.line)?.with_cd(&self.cd_ps_nm)?.with_launch(&self.launch_dbm)
    }
}

/// Everything measured for the calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibInputs {
    pub records: CalibrationDataset,
    /// Span loss at nominal settings from the amplifier photodiodes, dB.
    pub span_totals: BTreeMap<String, f64>,
    /// Transceivers with fitted back-to-back SNR.
    pub transceivers: Vec<TransceiverModel>,
}

impl CalibInputs {
    pub fn measure(
        plant: &OpticalLinePlant,
        records: usize,
        design: DatasetDesign,
        noise: &NoiseSpec,
        seed: u64,
    ) -> Result<Self> {
        let records = collect_dataset(plant, records, design, noise, seed.wrapping_add(1))?;
        let span_totals = span_loss_report(plant, &plant.nominal_settings(), noise, seed.wrapping_add(2))?;
        let mut transceivers = Vec::new();
        for (k, t) in plant.transceivers.iter().enumerate() {
            let curve = b2b_curve(plant, t, noise, seed.wrapping_add(3 + k as u64))?;
            let snr = fit_b2b(&curve, plant.grid().ref_bandwidth, t.symbol_rate, t.mf)?;
            transceivers.push(TransceiverModel { snr_trx_db: snr, b2b_curve: curve, ..t.clone() });
        }
        Ok(Self { records, span_totals, transceivers })
    }
}

/// Calibrated and baseline models of one plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Models {
    /// Dataset 2.
    pub calibration: CalibResult,
    pub params: ParameterSet,
    pub baseline: ParameterSet,
}

/// Fits the carrier link, merges it with dataset 1 and builds the baseline
/// from the photodiode span losses.
pub fn build_models(
    plant: &OpticalLinePlant,
    dlm: &DlmExtract,
    inputs: &CalibInputs,
    opts: &CalibOptions,
) -> Result<Models> {
    let mut baseline = build_baseline(&plant.line, &inputs.span_totals)?;
    let init = initial_guess(&baseline, &plant.line)?;
    let calibration = calibrate_with(&inputs.records, dlm, &init, opts)?;
    let mut params = merge(dlm, &calibration, &baseline)?;
    params.transceivers = inputs.transceivers.clone();
    baseline.transceivers = inputs.transceivers.clone();
    Ok(Models { calibration, params, baseline })
}
