//! GN-model QoT engine: propagates a launch spectrum through a parameter set
//! and reports per-channel signal power, OSNR, NLI-limited SNR and GSNR.

pub mod nli;
pub mod propagate;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::line::{Line, LineSettings};
use crate::qot::TransceiverModel;
use crate::spectral::{lin_to_db, SpectralProfile, Unit};

pub use propagate::{propagate, LineState, Propagation, StageOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Baseline,
    Calibrated,
    Truth,
}

/// Physical parameters of a line as seen by a model, tagged with where they
/// came from. Transceivers carry the back-to-back SNR used for Q prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub line: Line,
    pub provenance: Provenance,
    #[serde(default)]
    pub transceivers: Vec<TransceiverModel>,
    /// Reconciliation remarks attached while the set was assembled.
    #[serde(default)]
    pub notes: Vec<String>,
}

impl ParameterSet {
    pub fn new(line: Line, provenance: Provenance) -> Self {
        Self { line, provenance, transceivers: Vec::new(), notes: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QotPrediction {
    /// dBm per slot.
    pub p_sig: SpectralProfile,
    /// dB in the reference bandwidth.
    pub osnr: SpectralProfile,
    /// dB in the symbol-rate bandwidth; `+inf` when no NLI is present.
    pub snr_nli: SpectralProfile,
    /// ASE-only SNR in the symbol-rate bandwidth, dB.
    pub snr_ase: SpectralProfile,
    pub gsnr: SpectralProfile,
    pub propagation: Propagation,
}

/// Builds the QoT view of a propagated state.
pub fn qot_of(line: &Line, propagation: Propagation) -> QotPrediction {
    let grid = line.grid;
    let out = propagation.output();
    let bw = grid.symbol_rate / grid.ref_bandwidth;
    let mut p_sig = Vec::with_capacity(grid.n_channels);
    let mut osnr = Vec::with_capacity(grid.n_channels);
    let mut snr_nli = Vec::with_capacity(grid.n_channels);
    let mut snr_ase = Vec::with_capacity(grid.n_channels);
    let mut gsnr = Vec::with_capacity(grid.n_channels);
    for i in 0..grid.n_channels {
        let s = out.signal[i];
        p_sig.push(lin_to_db(s));
        osnr.push(lin_to_db(s / out.ase[i]));
        snr_ase.push(lin_to_db(s / (out.ase[i] * bw)));
        snr_nli.push(if out.nli[i] > 0.0 { lin_to_db(s / (out.nli[i] * bw)) } else { f64::INFINITY });
        gsnr.push(lin_to_db(s / ((out.ase[i] + out.nli[i]) * bw)));
    }
    let prof = |v, unit| SpectralProfile { grid, values: v, unit };
    QotPrediction {
        p_sig: prof(p_sig, Unit::Dbm),
        osnr: prof(osnr, Unit::Db),
        snr_nli: prof(snr_nli, Unit::Db),
        snr_ase: prof(snr_ase, Unit::Db),
        gsnr: prof(gsnr, Unit::Db),
        propagation,
    }
}

/// Predicts per-channel QoT at the end of the line for a launch spectrum
/// (dBm per slot) and amplifier settings.
pub fn predict(params: &ParameterSet, launch: &SpectralProfile, settings: &LineSettings) -> Result<QotPrediction> {
    params.line.grid.check_same(&launch.grid)?;
    let input = LineState::from_profile(launch)?;
    let prop = propagate(&params.line, &input, settings)?;
    for w in &prop.warnings {
        log::warn!("{w}");
    }
    Ok(qot_of(&params.line, prop))
}

/// Launch-power search window for [`optimal_launch`], per-channel dBm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaunchSearch {
    pub min_dbm: f64,
    pub max_dbm: f64,
    pub step_db: f64,
}

impl Default for LaunchSearch {
    fn default() -> Self {
        Self { min_dbm: -20.0, max_dbm: 20.0, step_db: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalLaunch {
    pub power_dbm: f64,
    pub gsnr_db: f64,
    pub warning: Option<String>,
}

/// GSNR of `channel` for a flat launch of `p_dbm` per slot.
pub fn gsnr_at_launch(params: &ParameterSet, settings: &LineSettings, channel: usize, p_dbm: f64) -> Result<f64> {
    let grid = params.line.grid;
    let launch = SpectralProfile::constant(grid, p_dbm, Unit::Dbm);
    Ok(predict(params, &launch, settings)?.gsnr.values[channel])
}

/// Flat per-channel launch power maximizing the GSNR of `channel`.
///
/// Coarse grid over `search`, then golden-section refinement around the best
/// grid point. A monotone curve returns the window edge; a curve with several
/// interior maxima returns the grid argmax with a warning.
pub fn optimal_launch(
    params: &ParameterSet,
    settings: &LineSettings,
    channel: usize,
    search: LaunchSearch,
) -> Result<OptimalLaunch> {
    if channel >= params.line.grid.n_channels {
        return Err(domain(format!("channel {channel} outside grid")));
    }
    if !(search.step_db > 0.0) || search.max_dbm <= search.min_dbm {
        return Err(domain("launch search window is empty"));
    }
    let n = ((search.max_dbm - search.min_dbm) / search.step_db).round() as usize;
    let mut pts = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let p = search.min_dbm + k as f64 * search.step_db;
        pts.push((p, gsnr_at_launch(params, settings, channel, p)?));
    }
    let (best, _) = pts.iter().enumerate().max_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).expect("non-empty grid");
    let interior_max = (1..pts.len() - 1).filter(|&i| pts[i].1 > pts[i - 1].1 && pts[i].1 >= pts[i + 1].1).count();
    if best == 0 || best == pts.len() - 1 {
        return Ok(OptimalLaunch { power_dbm: pts[best].0, gsnr_db: pts[best].1, warning: None });
    }
    if interior_max > 1 {
        return Ok(OptimalLaunch {
            power_dbm: pts[best].0,
            gsnr_db: pts[best].1,
            warning: Some(format!("GSNR curve has {interior_max} local maxima; returning grid argmax")),
        });
    }
    let f = |p: f64| gsnr_at_launch(params, settings, channel, p);
    let (mut a, mut b) = (pts[best - 1].0, pts[best + 1].0);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > 1e-7 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    let p = 0.5 * (a + b);
    Ok(OptimalLaunch { power_dbm: p, gsnr_db: f(p)?, warning: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::line::{EdfaModel, Element, FiberSpan, Segment, TaggedElement};
    use crate::spectral::FrequencyGrid;

    fn toy(n_spans: usize, gamma: f64) -> ParameterSet {
        let grid = FrequencyGrid::default();
        let mut elements = Vec::new();
        for k in 0..n_spans {
            let mut s = FiberSpan::flat(format!("S{k}"), 80.0, 0.2, 80.0);
            s.gamma_w_km = gamma;
            if gamma == 0.0 {
                s.a_eff_um2 = 80.0;
            }
            elements.push(TaggedElement { segment: Segment::CarrierLink, element: Element::Span(s) });
            let mut e = EdfaModel::agc(format!("A{k}"), 16.0, 5.0);
            e.max_output_power_dbm = 60.0;
            elements.push(TaggedElement { segment: Segment::CarrierLink, element: Element::Edfa(e) });
        }
        ParameterSet::new(Line::new(grid, elements), Provenance::Truth)
    }

    #[test]
    fn linear_regime_has_infinite_snr_nli() {
        let p = toy(1, 0.0);
        let launch = SpectralProfile::constant(p.line.grid, 0.0, Unit::Dbm);
        let q = predict(&p, &launch, &LineSettings::default()).unwrap();
        assert!(q.snr_nli.values.iter().all(|v| v.is_infinite() && *v > 0.0));
        for (g, a) in q.gsnr.values.iter().zip(&q.snr_ase.values) {
            assert!((g - a).abs() < 1e-12);
        }
    }

    #[test]
    fn gsnr_is_harmonic_sum() {
        let p = toy(2, 1.3);
        let launch = SpectralProfile::constant(p.line.grid, 3.0, Unit::Dbm);
        let q = predict(&p, &launch, &LineSettings::default()).unwrap();
        for i in 0..40 {
            let inv = |db: f64| 10f64.powf(-db / 10.0);
            let lhs = inv(q.gsnr.values[i]);
            let rhs = inv(q.snr_ase.values[i]) + inv(q.snr_nli.values[i]);
            assert!(((lhs - rhs) / lhs).abs() < 1e-9);
            assert!(q.gsnr.values[i] <= q.snr_ase.values[i].min(q.snr_nli.values[i]));
        }
    }

    #[test]
    fn ase_accumulates_incoherently() {
        let launch = |p: &ParameterSet| SpectralProfile::constant(p.line.grid, -10.0, Unit::Dbm);
        let one = toy(1, 0.0);
        let four = toy(4, 0.0);
        let g1 = predict(&one, &launch(&one), &LineSettings::default()).unwrap().gsnr.values[20];
        let g4 = predict(&four, &launch(&four), &LineSettings::default()).unwrap().gsnr.values[20];
        assert!((g1 - g4 - 10.0 * 4f64.log10()).abs() < 0.05);
    }

    #[test]
    fn linear_optimum_is_ceiling() {
        let p = toy(1, 0.0);
        let o = optimal_launch(&p, &LineSettings::default(), 20, LaunchSearch::default()).unwrap();
        assert_eq!(o.power_dbm, LaunchSearch::default().max_dbm);
    }

    #[test]
    fn optimum_balances_ase_and_nli() {
        let p = toy(3, 1.3);
        let o = optimal_launch(&p, &LineSettings::default(), 20, LaunchSearch::default()).unwrap();
        let launch = SpectralProfile::constant(p.line.grid, o.power_dbm, Unit::Dbm);
        let q = predict(&p, &launch, &LineSettings::default()).unwrap();
        let out = q.propagation.output();
        let ratio = lin_to_db(out.ase[20] / out.nli[20]);
        assert!((ratio - lin_to_db(2.0)).abs() < 0.05, "{ratio}");
    }
}
