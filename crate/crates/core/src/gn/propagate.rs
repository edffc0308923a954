//! Channel-resolved forward model: signal, ASE and NLI carried slot by slot
//! through spans, amplifiers and node losses.
//!
//! Units: signal in mW per slot; ASE and NLI in mW per reference bandwidth,
//! so `signal / ase` is the OSNR directly.

use serde::{Deserialize, Serialize};

use super::nli::NliSpan;
use crate::error::Result;
use crate::line::{AmpMode, EdfaModel, Element, FiberSpan, Line, LineSettings};
use crate::spectral::{db_to_lin, lin_to_db, FrequencyGrid, SpectralProfile, Unit, PLANCK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineState {
    pub signal: Vec<f64>,
    pub ase: Vec<f64>,
    pub nli: Vec<f64>,
}

impl LineState {
    /// Noise-free input from per-slot powers in dBm (`-inf` marks an empty slot).
    pub fn from_dbm(values: &[f64]) -> Self {
        let n = values.len();
        Self { signal: values.iter().map(|&v| db_to_lin(v)).collect(), ase: vec![0.0; n], nli: vec![0.0; n] }
    }

    pub fn from_profile(p: &SpectralProfile) -> Result<Self> {
        let dbm = p.to_db()?;
        Ok(Self::from_dbm(&dbm.values))
    }

    /// Power a photodiode would read, mW.
    pub fn total_mw(&self, grid: &FrequencyGrid) -> f64 {
        let k = grid.slot_to_ref();
        self.signal.iter().zip(&self.ase).zip(&self.nli).map(|((s, a), n)| s + (a + n) * k).sum()
    }

    pub fn total_dbm(&self, grid: &FrequencyGrid) -> f64 {
        lin_to_db(self.total_mw(grid))
    }

    /// Slot-integrated power per slot as an OSA would display it, dBm.
    pub fn osa_dbm(&self, grid: &FrequencyGrid) -> Vec<f64> {
        let k = grid.slot_to_ref();
        self.signal.iter().zip(&self.ase).zip(&self.nli).map(|((s, a), n)| lin_to_db(s + (a + n) * k)).collect()
    }

    fn scale(&mut self, i: usize, t: f64) {
        self.signal[i] *= t;
        self.ase[i] *= t;
        self.nli[i] *= t;
    }
}

/// What happened at one element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutput {
    pub element_id: String,
    pub input_total_dbm: f64,
    pub output_total_dbm: f64,
    /// Mean gain actually applied (amplifiers only).
    pub realized_gain_db: Option<f64>,
    pub nf_db: Option<f64>,
    pub saturated: bool,
    pub state: LineState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    pub input: LineState,
    pub stages: Vec<StageOutput>,
    pub warnings: Vec<String>,
}

impl Propagation {
    pub fn output(&self) -> &LineState {
        self.stages.last().map(|s| &s.state).unwrap_or(&self.input)
    }

    pub fn stage(&self, id: &str) -> Option<&StageOutput> {
        self.stages.iter().find(|s| s.element_id == id)
    }

    /// State entering element `id`.
    pub fn input_of(&self, id: &str) -> Option<&LineState> {
        let i = self.stages.iter().position(|s| s.element_id == id)?;
        Some(if i == 0 { &self.input } else { &self.stages[i - 1].state })
    }

    /// Per-element signal profiles in mW.
    pub fn signal_profiles(&self, grid: &FrequencyGrid) -> Vec<SpectralProfile> {
        self.stages
            .iter()
            .map(|s| SpectralProfile { grid: *grid, values: s.state.signal.clone(), unit: Unit::LinearMw })
            .collect()
    }

    /// Per-element ASE profiles in mW per reference bandwidth.
    pub fn ase_profiles(&self, grid: &FrequencyGrid) -> Vec<SpectralProfile> {
        self.stages
            .iter()
            .map(|s| SpectralProfile { grid: *grid, values: s.state.ase.clone(), unit: Unit::LinearMw })
            .collect()
    }
}

/// Runs `input` through every element of `line`.
pub fn propagate(line: &Line, input: &LineState, settings: &LineSettings) -> Result<Propagation> {
    settings.check_against(line)?;
    let grid = &line.grid;
    let mut state = input.clone();
    let mut stages = Vec::with_capacity(line.elements.len());
    let mut warnings = Vec::new();
    for tagged in &line.elements {
        let input_total_dbm = state.total_dbm(grid);
        let (realized_gain_db, nf_db, saturated) = match &tagged.element {
            Element::Span(span) => {
                span_step(span, grid, &mut state);
                (None, None, false)
            }
            Element::Node(node) => {
                let t = db_to_lin(-node.loss_db);
                for i in 0..grid.n_channels {
                    state.scale(i, t);
                }
                (None, None, false)
            }
            Element::Edfa(edfa) => {
                let out = amp_step(edfa, line, settings, &mut state, &mut warnings);
                (Some(out.0), Some(out.1), out.2)
            }
        };
        stages.push(StageOutput {
            element_id: tagged.element.id().to_string(),
            input_total_dbm,
            output_total_dbm: state.total_dbm(grid),
            realized_gain_db,
            nf_db,
            saturated,
            state: state.clone(),
        });
    }
    Ok(Propagation { input: input.clone(), stages, warnings })
}

/// NLI PSD (W/Hz) generated by `span` for a launch with mean per-slot power
/// `mean_launch_mw` after the input connector.
pub fn span_nli_psd(span: &FiberSpan, grid: &FrequencyGrid, mean_launch_mw: f64) -> f64 {
    let f_ref = grid.f_mid();
    let nli = NliSpan::from_engineering(
        span.gamma_w_km,
        span.alpha_at(f_ref),
        span.length_km,
        span.dispersion_ps_nm_km,
        f_ref,
    );
    nli.nli_psd(mean_launch_mw * 1e-3 / grid.channel_spacing, grid.occupied_bandwidth())
}

fn span_step(span: &FiberSpan, grid: &FrequencyGrid, state: &mut LineState) {
    let t_in = db_to_lin(-span.in_connector_db);
    for i in 0..grid.n_channels {
        state.scale(i, t_in);
    }
    let mean_launch = state.signal.iter().sum::<f64>() / grid.n_channels as f64;
    let nli_ref_mw = span_nli_psd(span, grid, mean_launch) * grid.ref_bandwidth * 1e3;
    let lumped = span.lumped_total_db();
    for (i, f) in grid.frequencies().into_iter().enumerate() {
        let t = db_to_lin(-(span.alpha_at(f) * span.length_km + lumped + span.out_connector_db));
        state.nli[i] += nli_ref_mw;
        state.scale(i, t);
    }
}

/// Per-slot gain shape (dB) around the mean gain.
pub fn gain_shape_db(edfa: &EdfaModel, line: &Line, tilt_db: f64) -> Vec<f64> {
    let grid = &line.grid;
    (0..grid.n_channels)
        .map(|i| tilt_db * grid.band_position(i) + edfa.ripple_scale * line.shared_ripple.values[i])
        .collect()
}

/// Output total (mW) for mean gain `g_db` together with the added ASE.
fn amp_output(
    edfa: &EdfaModel,
    grid: &FrequencyGrid,
    shape: &[f64],
    state: &LineState,
    g_db: f64,
) -> (f64, Vec<f64>, f64) {
    let (nf_db, _) = edfa.nf_curve.at(g_db);
    let nf = db_to_lin(nf_db);
    let k = grid.slot_to_ref();
    let mut total = 0.0;
    let mut gains = Vec::with_capacity(shape.len());
    for (i, &s) in shape.iter().enumerate() {
        let g = db_to_lin(g_db + s);
        let ase_add = nf * g * PLANCK * grid.frequency(i) * grid.ref_bandwidth * 1e3;
        total += state.signal[i] * g + (state.ase[i] * g + ase_add + state.nli[i] * g) * k;
        gains.push(g);
    }
    (total, gains, nf)
}

/// Mean gain at which the output total equals `target_mw`.
fn solve_gain(edfa: &EdfaModel, grid: &FrequencyGrid, shape: &[f64], state: &LineState, target_mw: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 70.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if amp_output(edfa, grid, shape, state, mid).0 < target_mw {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn amp_step(
    edfa: &EdfaModel,
    line: &Line,
    settings: &LineSettings,
    state: &mut LineState,
    warnings: &mut Vec<String>,
) -> (f64, f64, bool) {
    let grid = &line.grid;
    let setting = settings.resolve(edfa);
    let shape = gain_shape_db(edfa, line, setting.tilt_db);
    let max_mw = db_to_lin(edfa.max_output_power_dbm);
    let mut saturated = false;
    let mut g_db = match setting.mode {
        AmpMode::ConstantGainAgc => {
            let (lo, hi) = edfa.gain_range_db;
            let g = setting.gain_db.clamp(lo, hi);
            if g != setting.gain_db {
                warnings.push(format!("{}: gain {:.2} dB clamped to {g:.2} dB", edfa.edfa_id, setting.gain_db));
            }
            g
        }
        AmpMode::ConstantPower => {
            let mut target = setting.power_dbm;
            if target > edfa.max_output_power_dbm {
                saturated = true;
                target = edfa.max_output_power_dbm;
            }
            solve_gain(edfa, grid, &shape, state, db_to_lin(target))
        }
    };
    if amp_output(edfa, grid, &shape, state, g_db).0 > max_mw * (1.0 + 1e-12) {
        saturated = true;
        g_db = solve_gain(edfa, grid, &shape, state, max_mw);
    }
    if saturated {
        warnings.push(format!("{}: output clipped at {:.1} dBm", edfa.edfa_id, edfa.max_output_power_dbm));
    }
    let (nf_db, extrapolated) = edfa.nf_curve.at(g_db);
    if extrapolated {
        warnings.push(format!("{}: NF requested at {g_db:.2} dB outside curve, clamped", edfa.edfa_id));
    }
    let (_, gains, nf) = amp_output(edfa, grid, &shape, state, g_db);
    for (i, g) in gains.into_iter().enumerate() {
        state.scale(i, g);
        state.ase[i] += nf * g * PLANCK * grid.frequency(i) * grid.ref_bandwidth * 1e3;
    }
    (g_db, nf_db, saturated)
}
