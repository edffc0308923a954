//! Assembling parameter sets: the standard-fiber baseline and the merge of
//! DLM and calibration results.

use std::collections::BTreeMap;

use crate::dlm::{separate_gamma_power, DlmExtract, LumpedKind};
use crate::error::{domain, Error, Result};
use crate::gn::{ParameterSet, Provenance};
use crate::line::{aeff_from_gamma, Element, Line, LumpedLoss, NfCurve};
use crate::spectral::{SpectralProfile, Unit};

use super::CalibResult;

pub const BASELINE_IN_CONNECTOR_DB: f64 = 1.5;
pub const BASELINE_OUT_CONNECTOR_DB: f64 = 0.5;
pub const BASELINE_DISPERSION_PS_NM_KM: f64 = 16.7;
pub const BASELINE_GAMMA_W_KM: f64 = 1.3;
pub const BASELINE_NF_DB: f64 = 7.0;
/// DLM and calibration disagreeing by more than this are flagged.
pub const CONFLICT_DB: f64 = 0.3;

/// Standard-fiber model of `topology`: each span's measured total loss less
/// the assumed connectors spread evenly over its length, fixed NF, no ripple.
pub fn build_baseline(topology: &Line, span_totals_db: &BTreeMap<String, f64>) -> Result<ParameterSet> {
    let mut line = topology.clone();
    for t in &mut line.elements {
        match &mut t.element {
            Element::Span(s) => {
                if !(s.length_km > 0.0) {
                    return Err(domain(format!("span {}: zero length", s.span_id)));
                }
                let total = *span_totals_db
                    .get(&s.span_id)
                    .ok_or_else(|| domain(format!("span {}: no measured total loss", s.span_id)))?;
                let alpha = (total - BASELINE_IN_CONNECTOR_DB - BASELINE_OUT_CONNECTOR_DB) / s.length_km;
                if alpha < 0.0 {
                    return Err(domain(format!("span {}: inferred α {alpha:.4} dB/km is negative", s.span_id)));
                }
                s.alpha_knots = vec![(line.grid.f_mid(), alpha)];
                s.in_connector_db = BASELINE_IN_CONNECTOR_DB;
                s.out_connector_db = BASELINE_OUT_CONNECTOR_DB;
                s.lumped_losses.clear();
                s.dispersion_ps_nm_km = BASELINE_DISPERSION_PS_NM_KM;
                s.gamma_w_km = BASELINE_GAMMA_W_KM;
                s.a_eff_um2 = aeff_from_gamma(BASELINE_GAMMA_W_KM);
            }
            Element::Edfa(e) => e.nf_curve = NfCurve::flat(BASELINE_NF_DB),
            Element::Node(_) => {}
        }
    }
    line.shared_ripple = SpectralProfile::constant(line.grid, 0.0, Unit::Db);
    Ok(ParameterSet::new(line, Provenance::Baseline))
}

/// Starting point for calibration: `baseline` with each span's γ and A_eff
/// taken from the fiber records in `records`. The records fix the
/// nonlinearity; the DLM γ·P then pins the launch power and hence the
/// input connector, which telemetry alone cannot separate from the output
/// connector.
pub fn initial_guess(baseline: &ParameterSet, records: &Line) -> Result<ParameterSet> {
    let mut out = baseline.clone();
    let mut missing = Vec::new();
    for t in &mut out.line.elements {
        if let Element::Span(s) = &mut t.element {
            match records.span(&s.span_id) {
                Some(r) => {
                    s.gamma_w_km = r.gamma_w_km;
                    s.a_eff_um2 = r.a_eff_um2;
                }
                None => missing.push(s.span_id.clone()),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Merge(missing));
    }
    Ok(out)
}

fn note_conflict(notes: &mut Vec<String>, span: &str, what: &str, dlm: f64, calib: f64) {
    let d = (dlm - calib).abs();
    if d > 0.01 {
        let tag = if d > CONFLICT_DB { "conflict" } else { "note" };
        notes.push(format!("{tag}: {span} {what} DLM {dlm:.2} dB vs calibration {calib:.2} dB, calibration kept"));
    }
}

/// Combines dataset 1 and dataset 2 over the topology of `baseline`.
/// Calibrated spans take α(f) and connectors from calibration; the others
/// take the DLM slope and put the rest of their measured loss on the input
/// connector. Lumped positions and magnitudes, γ and D come from the DLM.
pub fn merge(dlm: &DlmExtract, calib: &CalibResult, baseline: &ParameterSet) -> Result<ParameterSet> {
    let mut line = baseline.line.clone();
    let grid = line.grid;
    let mut missing: Vec<String> =
        line.spans().filter(|s| dlm.span(&s.span_id).is_none()).map(|s| s.span_id.clone()).collect();
    missing.extend(calib.spans.iter().filter(|c| line.span(&c.span_id).is_none()).map(|c| c.span_id.clone()));
    missing.extend(calib.edfas.iter().filter(|c| line.edfa(&c.edfa_id).is_none()).map(|c| c.edfa_id.clone()));
    if !missing.is_empty() {
        return Err(Error::Merge(missing));
    }
    let mut notes = Vec::new();
    for t in &mut line.elements {
        match &mut t.element {
            Element::Span(s) => {
                let e = dlm.span(&s.span_id).expect("coverage checked");
                let measured_total = s.total_loss_db(&grid);
                s.lumped_losses = e
                    .lumped
                    .iter()
                    .filter(|l| l.kind == LumpedKind::MidSpan)
                    .map(|l| LumpedLoss { position_km: l.position_km, loss_db: l.loss_db })
                    .collect();
                if let Some(c) = calib.span(&s.span_id) {
                    s.alpha_knots = c.alpha_knots.clone();
                    s.in_connector_db = c.in_connector_db;
                    s.out_connector_db = c.out_connector_db;
                    for l in &e.lumped {
                        match l.kind {
                            LumpedKind::InputConnector => {
                                note_conflict(&mut notes, &s.span_id, "input connector", l.loss_db, c.in_connector_db)
                            }
                            LumpedKind::OutputConnector => {
                                note_conflict(&mut notes, &s.span_id, "output connector", l.loss_db, c.out_connector_db)
                            }
                            LumpedKind::MidSpan => {}
                        }
                    }
                } else {
                    s.alpha_knots = vec![(grid.dlm_frequency(), e.alpha_dlm_db_km)];
                    let rest = measured_total - e.alpha_dlm_db_km * s.length_km - s.lumped_total_db();
                    if rest < 0.0 {
                        notes.push(format!(
                            "note: {} DLM losses exceed the measured total by {:.2} dB",
                            s.span_id, -rest
                        ));
                    }
                    s.in_connector_db = rest.max(0.0);
                    s.out_connector_db = 0.0;
                }
                if let Some(d) = e.dispersion_ps_nm_km() {
                    s.dispersion_ps_nm_km = d;
                }
                match e.launch_dbm {
                    Some(p) => {
                        let (g, a) = separate_gamma_power(e.gamma_p_in, p, s.in_connector_db)?;
                        s.gamma_w_km = g;
                        s.a_eff_um2 = a;
                    }
                    None => notes.push(format!("note: {} has no DLM launch power, γ left at baseline", s.span_id)),
                }
            }
            Element::Edfa(a) => {
                if let Some(c) = calib.edfa(&a.edfa_id) {
                    a.nf_curve = c.nf_curve.clone();
                }
            }
            Element::Node(_) => {}
        }
    }
    line.shared_ripple = calib.shared_ripple.clone();
    line.validate()?;
    let mut out = ParameterSet::new(line, Provenance::Calibrated);
    out.transceivers = baseline.transceivers.clone();
    out.notes = notes;
    Ok(out)
}
