//! Transparency configuration, booster power sweep and stability run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::record_fit;
use crate::error::{domain, Result};
use crate::gn::{predict, ParameterSet};
use crate::line::{AmpMode, AmpSetting, Element, LineSettings, Segment};
use crate::plant::{measure, measure_q, NoiseSpec, OpticalLinePlant};
use crate::qot::{combine_snr, relative_q, QReport};
use crate::spectral::{mean_std, SpectralProfile};

/// Inclusive grid of gains, dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRange {
    pub from_db: f64,
    pub to_db: f64,
    pub step_db: f64,
}

/// Booster gains visited by the validation sweep.
pub const BOOSTER_SWEEP: SweepRange = SweepRange { from_db: 12.0, to_db: 20.0, step_db: 0.5 };

impl SweepRange {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step_db > 0.0) || !(self.to_db >= self.from_db) {
            return Err(domain(format!("empty sweep {self:?}")));
        }
        let n = ((self.to_db - self.from_db) / self.step_db + 1e-9).floor() as usize;
        Ok((0..=n).map(|k| self.from_db + k as f64 * self.step_db).collect())
    }
}

/// Common-tilt candidates, dB.
const TILT_MAX_DB: f64 = 3.0;
const TILT_STEP_DB: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transparency {
    pub settings: LineSettings,
    pub booster_id: String,
    pub booster_gain_db: f64,
    pub tilt_db: f64,
    /// Predicted mean end-to-end Q at each scanned booster gain.
    pub booster_scan: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// End-to-end SNR (dB) of each transceiver in `params`, transceiver noise
/// included.
pub fn predicted_ete_snr(params: &ParameterSet, launch: &SpectralProfile, settings: &LineSettings) -> Result<Vec<f64>> {
    if params.transceivers.is_empty() {
        return Err(domain("parameter set has no transceivers"));
    }
    let q = predict(params, launch, settings)?;
    Ok(params.transceivers.iter().map(|t| combine_snr(&[t.snr_trx_db, q.gsnr.values[t.slot]])).collect())
}

/// Least-squares slope of `values` (dB) against slot frequency, dB/THz.
pub fn spectral_slope(p: &SpectralProfile) -> f64 {
    let f: Vec<f64> = p.grid.frequencies().iter().map(|f| f * 1e-12).collect();
    let (fm, _) = mean_std(&f);
    let (vm, _) = mean_std(&p.values);
    let (num, den) =
        f.iter().zip(&p.values).fold((0.0, 0.0), |(n, d), (x, y)| (n + (x - fm) * (y - vm), d + (x - fm).powi(2)));
    num / den
}

/// Carrier-link amplifiers recover the loss of the span before them, the
/// booster maximizes the predicted end-to-end Q over `scan`, and one tilt
/// shared by the carrier link flattens the received spectrum. Access-link
/// amplifiers hold their output power.
pub fn configure_transparency(
    params: &ParameterSet,
    launch: &SpectralProfile,
    scan: SweepRange,
) -> Result<Transparency> {
    let line = &params.line;
    let grid = line.grid;
    let mut settings = LineSettings::default();
    let mut warnings = Vec::new();
    let mut booster = None;
    let mut cl_amps = Vec::new();
    for (i, t) in line.elements.iter().enumerate() {
        let Element::Edfa(e) = &t.element else { continue };
        if t.segment != Segment::CarrierLink {
            settings.set(e.edfa_id.clone(), AmpSetting::power(e.setpoint_power_dbm, e.tilt_db));
            continue;
        }
        cl_amps.push(e);
        let prev = i.checked_sub(1).and_then(|j| line.elements[j].element.as_span());
        match prev {
            Some(s) => {
                let want = s.total_loss_db(&grid);
                let (lo, hi) = e.gain_range_db;
                let g = want.clamp(lo, hi);
                if g != want {
                    warnings.push(format!("{}: transparent gain {want:.2} dB clamped to {g:.2} dB", e.edfa_id));
                }
                settings.set(e.edfa_id.clone(), AmpSetting::gain(g, e.tilt_db));
            }
            None if booster.is_none() => {
                booster = Some(e);
                settings.set(e.edfa_id.clone(), AmpSetting::gain(e.target_gain_db, e.tilt_db));
            }
            None => {
                return Err(domain(format!("{}: second carrier-link amplifier without a span before it", e.edfa_id)))
            }
        }
    }
    let booster = booster.ok_or_else(|| domain("carrier link has no booster"))?;

    let with_tilt = |base: &LineSettings, tilt: f64| {
        let mut s = base.clone();
        for e in &cl_amps {
            let a = s.amps[&e.edfa_id];
            s.set(e.edfa_id.clone(), AmpSetting { tilt_db: tilt, ..a });
        }
        s
    };
    let n = (TILT_MAX_DB / TILT_STEP_DB).round() as i64;
    let tilts: Vec<f64> = (-n..=n).map(|k| k as f64 * TILT_STEP_DB).collect();
    let slopes = tilts
        .par_iter()
        .map(|&t| Ok(spectral_slope(&predict(params, launch, &with_tilt(&settings, t))?.p_sig).abs()))
        .collect::<Result<Vec<f64>>>()?;
    // Smallest |slope|, then smallest |tilt|.
    let tilt = tilts
        .iter()
        .zip(&slopes)
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.abs().total_cmp(&b.0.abs())))
        .map(|(t, _)| *t)
        .expect("tilt grid is not empty");
    let settings = with_tilt(&settings, tilt);

    let at_gain = |g: f64| {
        let mut s = settings.clone();
        s.set(booster.edfa_id.clone(), AmpSetting::gain(g, tilt));
        s
    };
    let booster_scan = scan
        .points()?
        .par_iter()
        .map(|&g| {
            let q = predicted_ete_snr(params, launch, &at_gain(g))?;
            Ok((g, mean_std(&q).0))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    // First maximum wins, which is the lowest gain among ties.
    let (gain, _) =
        booster_scan.iter().fold((f64::NAN, f64::NEG_INFINITY), |best, &(g, q)| if q > best.1 { (g, q) } else { best });
    Ok(Transparency {
        settings: at_gain(gain),
        booster_id: booster.edfa_id.clone(),
        booster_gain_db: gain,
        tilt_db: tilt,
        booster_scan,
        warnings,
    })
}

/// Carrier-link errors of one model at one sweep point, measured minus
/// predicted, dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub q: QReport,
    pub p_sig_average_error_db: f64,
    pub p_sig_ripple_error_db: f64,
    pub osnr_average_error_db: f64,
    pub osnr_ripple_error_db: f64,
}

impl ModelPoint {
    /// Mean predicted-minus-measured relative Q over the transceivers.
    pub fn q_error_db(&self) -> f64 {
        let e: Vec<f64> = self.q.channels.iter().filter_map(|c| c.error_db()).collect();
        mean_std(&e).0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub booster_gain_db: f64,
    pub calibrated: ModelPoint,
    pub baseline: ModelPoint,
}

/// Aggregate error statistics of one model over a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub mean_abs_p_sig_error_db: f64,
    pub mean_abs_osnr_error_db: f64,
    pub mean_abs_q_error_db: f64,
    pub q_error_std_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub booster_id: String,
    /// Subtracted from every SNR to form relative Q: the best measured SNR.
    pub offset_db: f64,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn stats(&self, calibrated: bool) -> SweepStats {
        let pick = |p: &SweepPoint| if calibrated { p.calibrated.clone() } else { p.baseline.clone() };
        let pts: Vec<ModelPoint> = self.points.iter().map(pick).collect();
        let n = pts.len() as f64;
        let q: Vec<f64> = pts.iter().map(ModelPoint::q_error_db).collect();
        SweepStats {
            mean_abs_p_sig_error_db: pts.iter().map(|p| p.p_sig_average_error_db.abs()).sum::<f64>() / n,
            mean_abs_osnr_error_db: pts.iter().map(|p| p.osnr_average_error_db.abs()).sum::<f64>() / n,
            mean_abs_q_error_db: q.iter().map(|e| e.abs()).sum::<f64>() / n,
            q_error_std_db: mean_std(&q).1,
        }
    }

    /// One row per sweep point: booster gain, then per channel measured
    /// relative Q, predicted relative Q and error for each model, then the
    /// carrier-link error decomposition for each model.
    pub fn to_csv(&self) -> String {
        let Some(first) = self.points.first() else { return "booster_gain_db\n".into() };
        let labels: Vec<&str> = first.calibrated.q.channels.iter().map(|c| c.label.as_str()).collect();
        let mut head = vec!["booster_gain_db".to_string()];
        for l in &labels {
            head.push(format!("{l}_measured_q_db"));
            for m in ["calibrated", "baseline"] {
                head.push(format!("{l}_{m}_q_db"));
                head.push(format!("{l}_{m}_error_db"));
            }
        }
        for m in ["calibrated", "baseline"] {
            for k in ["p_sig_average", "p_sig_ripple", "osnr_average", "osnr_ripple"] {
                head.push(format!("{m}_{k}_error_db"));
            }
        }
        let mut out = head.join(",") + "\n";
        for p in &self.points {
            let mut row = vec![format!("{:.2}", p.booster_gain_db)];
            for (i, c) in p.calibrated.q.channels.iter().enumerate() {
                row.push(format!("{:.6}", c.relative_q_measured_db.unwrap_or(f64::NAN)));
                for m in [&p.calibrated, &p.baseline] {
                    let ch = &m.q.channels[i];
                    row.push(format!("{:.6}", ch.relative_q_predicted_db));
                    row.push(format!("{:.6}", ch.error_db().unwrap_or(f64::NAN)));
                }
            }
            for m in [&p.calibrated, &p.baseline] {
                for v in
                    [m.p_sig_average_error_db, m.p_sig_ripple_error_db, m.osnr_average_error_db, m.osnr_ripple_error_db]
                {
                    row.push(format!("{v:.6}"));
                }
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Steps the booster over `range` with the other amplifiers at `settings`.
/// Each point measures the plant (comb telemetry on the carrier link, Q on
/// the transceivers) and predicts both with the calibrated and baseline
/// models.
#[allow(clippy::too_many_arguments)]
pub fn power_sweep(
    plant: &OpticalLinePlant,
    calibrated: &ParameterSet,
    baseline: &ParameterSet,
    settings: &LineSettings,
    booster_id: &str,
    range: SweepRange,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<SweepReport> {
    let tilt = plant.line.edfa(booster_id).ok_or_else(|| domain(format!("unknown booster {booster_id}")))?.tilt_db;
    let tilt = settings.amps.get(booster_id).map_or(tilt, |a| a.tilt_db);
    let launch = plant.ete_launch();
    let cl = plant.carrier_link();
    let labels: Vec<String> = plant.transceivers.iter().map(|t| t.trx_id.clone()).collect();
    let gains = range.points()?;
    let raw = gains
        .par_iter()
        .enumerate()
        .map(|(k, &g)| {
            let mut s = settings.clone();
            s.set(booster_id, AmpSetting { mode: AmpMode::ConstantGainAgc, gain_db: g, tilt_db: tilt, power_dbm: 0.0 });
            let pt_seed = seed.wrapping_mul(7919).wrapping_add(k as u64);
            let rec = measure(plant, &plant.comb, &s.restricted_to(&cl), noise, pt_seed)?;
            let q: Vec<f64> = measure_q(plant, &s, noise, pt_seed ^ 0x5a5a)?.iter().map(|r| r.snr_db).collect();
            let model = |p: &ParameterSet| -> Result<(Vec<f64>, crate::calib::RecordFit)> {
                Ok((predicted_ete_snr(p, &launch, &s)?, record_fit(p, &plant.comb, &rec)?))
            };
            Ok((g, q, model(calibrated)?, model(baseline)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let offset_db = raw.iter().flat_map(|r| r.1.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    let point = |pred: &[f64], meas: &[f64], fit: &crate::calib::RecordFit| -> Result<ModelPoint> {
        Ok(ModelPoint {
            q: relative_q(&labels, pred, Some(meas), offset_db)?,
            p_sig_average_error_db: fit.signal_average_db,
            p_sig_ripple_error_db: fit.signal_ripple_db,
            osnr_average_error_db: fit.osnr_average_db,
            osnr_ripple_error_db: fit.osnr_ripple_db,
        })
    };
    let points = raw
        .iter()
        .map(|(g, q, (cq, cf), (bq, bf))| {
            Ok(SweepPoint { booster_gain_db: *g, calibrated: point(cq, q, cf)?, baseline: point(bq, q, bf)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { booster_id: booster_id.into(), offset_db, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityChannel {
    pub trx_id: String,
    pub slot: usize,
    /// Measured end-to-end SNR per sample, dB.
    pub q_db: Vec<f64>,
    pub three_sigma_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub interval_min: f64,
    pub channels: Vec<StabilityChannel>,
}

/// Repeats the transceiver readings `samples` times at a fixed configuration.
pub fn stability_run(
    plant: &OpticalLinePlant,
    settings: &LineSettings,
    samples: usize,
    interval_min: f64,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<StabilityReport> {
    if samples < 2 {
        return Err(domain("stability run needs at least two samples"));
    }
    let reads = (0..samples)
        .into_par_iter()
        .map(|k| measure_q(plant, settings, noise, seed.wrapping_mul(104_729).wrapping_add(k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let channels = plant
        .transceivers
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let q_db: Vec<f64> = reads.iter().map(|r| r[i].snr_db).collect();
            // Deviations from the first sample keep a constant series at exactly 0.
            let d: Vec<f64> = q_db.iter().map(|q| q - q_db[0]).collect();
            StabilityChannel { trx_id: t.trx_id.clone(), slot: t.slot, three_sigma_db: 3.0 * mean_std(&d).1, q_db }
        })
        .collect();
    Ok(StabilityReport { interval_min, channels })
}
