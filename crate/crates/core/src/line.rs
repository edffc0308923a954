//! Physical element records (fiber spans, amplifiers, node losses) and the
//! ordered line they form. Both the ground-truth plant and every estimated
//! parameter set are a [`Line`].

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::spectral::{FrequencyGrid, SpectralProfile, Unit};

/// Nonlinear index used for γ ↔ A_eff conversion, m²/W.
pub const N2: f64 = 2.6e-20;
/// Reference wavelength for γ ↔ A_eff conversion, m.
pub const LAMBDA_REF: f64 = 1550e-9;

/// γ in 1/(W·km) for an effective area in µm².
pub fn gamma_from_aeff(a_eff_um2: f64) -> f64 {
    2.0 * PI * N2 / (LAMBDA_REF * a_eff_um2 * 1e-12) * 1e3
}

/// Effective area in µm² for γ in 1/(W·km).
pub fn aeff_from_gamma(gamma_w_km: f64) -> f64 {
    2.0 * PI * N2 / (LAMBDA_REF * gamma_w_km * 1e-3) * 1e12
}

/// Piecewise-linear interpolation over sorted knots, clamped outside.
/// Returns the value and whether the query fell outside the knot range.
pub fn interp_clamped(knots: &[(f64, f64)], x: f64) -> (f64, bool) {
    debug_assert!(!knots.is_empty());
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if x <= first.0 {
        return (first.1, x < first.0);
    }
    if x >= last.0 {
        return (last.1, x > last.0);
    }
    let i = knots.partition_point(|k| k.0 <= x);
    let (x0, y0) = knots[i - 1];
    let (x1, y1) = knots[i];
    (y0 + (y1 - y0) * (x - x0) / (x1 - x0), false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumpedLoss {
    pub position_km: f64,
    pub loss_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberSpan {
    pub span_id: String,
    pub length_km: f64,
    /// (Hz, dB/km) knots of α(f), sorted by frequency.
    pub alpha_knots: Vec<(f64, f64)>,
    pub dispersion_ps_nm_km: f64,
    pub gamma_w_km: f64,
    pub a_eff_um2: f64,
    pub in_connector_db: f64,
    pub out_connector_db: f64,
    #[serde(default)]
    pub lumped_losses: Vec<LumpedLoss>,
}

impl FiberSpan {
    /// A span with flat attenuation and γ derived from the effective area.
    pub fn flat(id: impl Into<String>, length_km: f64, alpha_db_km: f64, a_eff_um2: f64) -> Self {
        Self {
            span_id: id.into(),
            length_km,
            alpha_knots: vec![(193.5e12, alpha_db_km)],
            dispersion_ps_nm_km: 16.7,
            gamma_w_km: gamma_from_aeff(a_eff_um2),
            a_eff_um2,
            in_connector_db: 0.0,
            out_connector_db: 0.0,
            lumped_losses: Vec::new(),
        }
    }

    pub fn alpha_at(&self, f: f64) -> f64 {
        interp_clamped(&self.alpha_knots, f).0
    }

    /// α averaged over the grid slots.
    pub fn alpha_mean(&self, grid: &FrequencyGrid) -> f64 {
        grid.frequencies().iter().map(|&f| self.alpha_at(f)).sum::<f64>() / grid.n_channels as f64
    }

    pub fn lumped_total_db(&self) -> f64 {
        self.lumped_losses.iter().map(|l| l.loss_db).sum()
    }

    /// Loss at one frequency including connectors and lumped losses.
    pub fn loss_db_at(&self, f: f64) -> f64 {
        self.in_connector_db + self.alpha_at(f) * self.length_km + self.lumped_total_db() + self.out_connector_db
    }

    /// Loss with α at its band average, as tabulated per span.
    pub fn total_loss_db(&self, grid: &FrequencyGrid) -> f64 {
        self.in_connector_db + self.alpha_mean(grid) * self.length_km + self.lumped_total_db() + self.out_connector_db
    }

    /// Loss accumulated between the span input (before the input connector)
    /// and position `z_km` inside the fiber, at frequency `f`.
    pub fn loss_to(&self, z_km: f64, f: f64) -> f64 {
        let lumped: f64 = self.lumped_losses.iter().filter(|l| l.position_km < z_km).map(|l| l.loss_db).sum();
        self.in_connector_db + self.alpha_at(f) * z_km + lumped
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.span_id;
        if !(self.length_km >= 0.0) {
            return Err(Error::Plant(format!("span {id}: negative length")));
        }
        if self.alpha_knots.is_empty() {
            return Err(Error::Plant(format!("span {id}: no attenuation knots")));
        }
        if self.alpha_knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Plant(format!("span {id}: α knots not strictly increasing")));
        }
        if self.alpha_knots.iter().any(|k| k.1 < 0.0)
            || self.in_connector_db < 0.0
            || self.out_connector_db < 0.0
            || self.lumped_losses.iter().any(|l| l.loss_db < 0.0)
        {
            return Err(Error::Plant(format!("span {id}: negative loss")));
        }
        if self.lumped_losses.iter().any(|l| !(l.position_km > 0.0 && l.position_km < self.length_km)) {
            return Err(Error::Plant(format!("span {id}: lumped loss outside (0, L)")));
        }
        if !(self.gamma_w_km >= 0.0) || !(self.a_eff_um2 > 0.0) {
            return Err(Error::Plant(format!("span {id}: γ/A_eff out of range")));
        }
        if self.gamma_w_km > 0.0 {
            let implied = gamma_from_aeff(self.a_eff_um2);
            if ((implied - self.gamma_w_km) / self.gamma_w_km).abs() > 0.01 {
                return Err(Error::Plant(format!(
                    "span {id}: γ={} inconsistent with A_eff={} (implies {implied:.3})",
                    self.gamma_w_km, self.a_eff_um2
                )));
            }
        }
        Ok(())
    }
}

/// Noise figure as a function of operating gain, piecewise linear in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfCurve(pub Vec<(f64, f64)>);

impl NfCurve {
    pub fn flat(nf_db: f64) -> Self {
        NfCurve(vec![(0.0, nf_db), (40.0, nf_db)])
    }

    /// NF at `gain_db`, clamped to the end points; the flag reports clamping.
    pub fn at(&self, gain_db: f64) -> (f64, bool) {
        interp_clamped(&self.0, gain_db)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.len() < 2 {
            return Err(domain("NF curve needs at least two points"));
        }
        if self.0.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(domain("NF curve gains must be strictly increasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmpMode {
    ConstantGainAgc,
    ConstantPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdfaModel {
    pub edfa_id: String,
    pub mode: AmpMode,
    pub target_gain_db: f64,
    /// End-to-end tilt across the band, dB.
    pub tilt_db: f64,
    pub setpoint_power_dbm: f64,
    pub nf_curve: NfCurve,
    pub ripple_scale: f64,
    pub max_output_power_dbm: f64,
    /// Settable gain range; requests outside are clamped.
    #[serde(default = "default_gain_range")]
    pub gain_range_db: (f64, f64),
}

fn default_gain_range() -> (f64, f64) {
    (5.0, 30.0)
}

impl EdfaModel {
    pub fn agc(id: impl Into<String>, gain_db: f64, nf_db: f64) -> Self {
        Self {
            edfa_id: id.into(),
            mode: AmpMode::ConstantGainAgc,
            target_gain_db: gain_db,
            tilt_db: 0.0,
            setpoint_power_dbm: 0.0,
            nf_curve: NfCurve::flat(nf_db),
            ripple_scale: 0.0,
            max_output_power_dbm: 30.0,
            gain_range_db: default_gain_range(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.nf_curve.validate().map_err(|e| Error::Plant(format!("EDFA {}: {e}", self.edfa_id)))?;
        if !(self.ripple_scale >= 0.0) {
            return Err(Error::Plant(format!("EDFA {}: negative ripple scale", self.edfa_id)));
        }
        Ok(())
    }
}

/// Flat passive loss at a node (WSS, FXC, patch panels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLoss {
    pub node_id: String,
    pub loss_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Aal1,
    CarrierLink,
    Aal2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Element {
    Span(FiberSpan),
    Edfa(EdfaModel),
    Node(NodeLoss),
}

impl Element {
    pub fn id(&self) -> &str {
        match self {
            Element::Span(s) => &s.span_id,
            Element::Edfa(e) => &e.edfa_id,
            Element::Node(n) => &n.node_id,
        }
    }

    pub fn as_span(&self) -> Option<&FiberSpan> {
        match self {
            Element::Span(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_edfa(&self) -> Option<&EdfaModel> {
        match self {
            Element::Edfa(e) => Some(e),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedElement {
    pub segment: Segment,
    #[serde(flatten)]
    pub element: Element,
}

/// Ordered elements from the transmit edge to the receive edge, with the
/// intrinsic gain-ripple shape shared by every amplifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub grid: FrequencyGrid,
    pub elements: Vec<TaggedElement>,
    /// Zero-mean dB shape.
    pub shared_ripple: SpectralProfile,
}

impl Line {
    pub fn new(grid: FrequencyGrid, elements: Vec<TaggedElement>) -> Self {
        Self { grid, elements, shared_ripple: SpectralProfile::constant(grid, 0.0, Unit::Db) }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.elements {
            if !seen.insert(t.element.id().to_string()) {
                return Err(Error::Plant(format!("duplicate element id {}", t.element.id())));
            }
            match &t.element {
                Element::Span(s) => s.validate()?,
                Element::Edfa(e) => e.validate()?,
                Element::Node(n) if n.loss_db < 0.0 => {
                    return Err(Error::Plant(format!("node {}: negative loss", n.node_id)))
                }
                Element::Node(_) => {}
            }
        }
        if self.shared_ripple.len() != self.grid.n_channels {
            return Err(Error::Plant("ripple profile does not match grid".into()));
        }
        let mean = self.shared_ripple.values.iter().sum::<f64>() / self.grid.n_channels as f64;
        if mean.abs() > 1e-9 {
            return Err(Error::Plant(format!("shared ripple must be zero-mean (mean {mean})")));
        }
        Ok(())
    }

    pub fn spans(&self) -> impl Iterator<Item = &FiberSpan> {
        self.elements.iter().filter_map(|t| t.element.as_span())
    }

    pub fn edfas(&self) -> impl Iterator<Item = &EdfaModel> {
        self.elements.iter().filter_map(|t| t.element.as_edfa())
    }

    pub fn element(&self, id: &str) -> Option<&Element> {
        self.elements.iter().map(|t| &t.element).find(|e| e.id() == id)
    }

    pub fn element_mut(&mut self, id: &str) -> Option<&mut Element> {
        self.elements.iter_mut().map(|t| &mut t.element).find(|e| e.id() == id)
    }

    pub fn span(&self, id: &str) -> Option<&FiberSpan> {
        self.element(id).and_then(Element::as_span)
    }

    pub fn span_mut(&mut self, id: &str) -> Option<&mut FiberSpan> {
        match self.element_mut(id) {
            Some(Element::Span(s)) => Some(s),
            _ => None,
        }
    }

    pub fn edfa(&self, id: &str) -> Option<&EdfaModel> {
        self.element(id).and_then(Element::as_edfa)
    }

    pub fn edfa_mut(&mut self, id: &str) -> Option<&mut EdfaModel> {
        match self.element_mut(id) {
            Some(Element::Edfa(e)) => Some(e),
            _ => None,
        }
    }

    /// Index range `[first, last]` of a segment's elements.
    pub fn segment_range(&self, seg: Segment) -> Option<std::ops::RangeInclusive<usize>> {
        let first = self.elements.iter().position(|t| t.segment == seg)?;
        let last = self.elements.iter().rposition(|t| t.segment == seg)?;
        Some(first..=last)
    }

    /// A new line holding only the elements of `range`.
    pub fn sub_line(&self, range: std::ops::RangeInclusive<usize>) -> Line {
        Line { grid: self.grid, elements: self.elements[range].to_vec(), shared_ripple: self.shared_ripple.clone() }
    }

    /// Cumulative fiber distance at the input of each element, km.
    pub fn element_positions_km(&self) -> Vec<f64> {
        let mut z = 0.0;
        self.elements
            .iter()
            .map(|t| {
                let here = z;
                if let Element::Span(s) = &t.element {
                    z += s.length_km;
                }
                here
            })
            .collect()
    }

    pub fn total_length_km(&self) -> f64 {
        self.spans().map(|s| s.length_km).sum()
    }
}

/// Operating point requested for one amplifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpSetting {
    pub mode: AmpMode,
    pub gain_db: f64,
    pub tilt_db: f64,
    pub power_dbm: f64,
}

impl AmpSetting {
    pub fn gain(gain_db: f64, tilt_db: f64) -> Self {
        Self { mode: AmpMode::ConstantGainAgc, gain_db, tilt_db, power_dbm: 0.0 }
    }

    pub fn power(power_dbm: f64, tilt_db: f64) -> Self {
        Self { mode: AmpMode::ConstantPower, gain_db: 0.0, tilt_db, power_dbm }
    }

    pub fn from_model(e: &EdfaModel) -> Self {
        Self { mode: e.mode, gain_db: e.target_gain_db, tilt_db: e.tilt_db, power_dbm: e.setpoint_power_dbm }
    }
}

/// Per-amplifier overrides. Amplifiers without an entry run at the
/// operating point stored in their model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LineSettings {
    pub amps: BTreeMap<String, AmpSetting>,
}

impl LineSettings {
    pub fn set(&mut self, id: impl Into<String>, s: AmpSetting) -> &mut Self {
        self.amps.insert(id.into(), s);
        self
    }

    pub fn resolve(&self, e: &EdfaModel) -> AmpSetting {
        self.amps.get(&e.edfa_id).copied().unwrap_or_else(|| AmpSetting::from_model(e))
    }

    /// Fails if a setting names an amplifier that is not on the line.
    pub fn check_against(&self, line: &Line) -> Result<()> {
        for id in self.amps.keys() {
            if line.edfa(id).is_none() {
                return Err(domain(format!("settings reference unknown EDFA {id}")));
            }
        }
        Ok(())
    }

    /// The entries for amplifiers on `line`.
    pub fn restricted_to(&self, line: &Line) -> Self {
        let amps = self.amps.iter().filter(|(id, _)| line.edfa(id).is_some()).map(|(k, v)| (k.clone(), *v)).collect();
        Self { amps }
    }

    /// Settings reproducing each model's stored operating point.
    pub fn from_line(line: &Line) -> Self {
        let amps = line.edfas().map(|e| (e.edfa_id.clone(), AmpSetting::from_model(e))).collect();
        Self { amps }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_aeff_table_values() {
        // CL 1: A_eff 90.84 µm² ↔ γ 1.16
        assert!((gamma_from_aeff(90.84) - 1.16).abs() / 1.16 < 0.01);
        // AAL 1: A_eff 82.2 ↔ γ 1.28
        assert!((gamma_from_aeff(82.2) - 1.28).abs() / 1.28 < 0.01);
        let g = 1.234;
        assert!((gamma_from_aeff(aeff_from_gamma(g)) - g).abs() < 1e-12);
    }

    #[test]
    fn interpolation_clamps() {
        let k = [(1.0, 10.0), (2.0, 20.0), (4.0, 0.0)];
        assert_eq!(interp_clamped(&k, 0.0), (10.0, true));
        assert_eq!(interp_clamped(&k, 1.5), (15.0, false));
        assert_eq!(interp_clamped(&k, 3.0), (10.0, false));
        assert_eq!(interp_clamped(&k, 5.0), (0.0, true));
        assert_eq!(interp_clamped(&k, 2.0), (20.0, false));
    }

    #[test]
    fn span_losses() {
        let mut s = FiberSpan::flat("CL 1", 51.86, 0.2, 90.84);
        s.in_connector_db = 3.33;
        s.out_connector_db = 0.93;
        s.lumped_losses.push(LumpedLoss { position_km: 25.0, loss_db: 2.25 });
        s.validate().unwrap();
        let g = FrequencyGrid::default();
        let expected = 3.33 + 0.2 * 51.86 + 2.25 + 0.93;
        assert!((s.total_loss_db(&g) - expected).abs() < 1e-12);
        assert!((s.loss_to(30.0, 193e12) - (3.33 + 6.0 + 2.25)).abs() < 1e-12);

        s.lumped_losses.push(LumpedLoss { position_km: 60.0, loss_db: 1.0 });
        assert!(s.validate().is_err());
    }

    #[test]
    fn nf_curve_rules() {
        assert!(NfCurve(vec![(10.0, 6.0)]).validate().is_err());
        assert!(NfCurve(vec![(10.0, 6.0), (10.0, 5.0)]).validate().is_err());
        let c = NfCurve(vec![(10.0, 7.0), (20.0, 5.0)]);
        assert_eq!(c.at(15.0), (6.0, false));
        assert_eq!(c.at(25.0), (5.0, true));
    }
}
