//! Plant description files (TOML). Field names follow the usual span and
//! amplifier tables: lengths in km, losses in dB, A_eff in µm², D in
//! ps/nm/km, γ in 1/(W·km), gains/tilts in dB, powers in dBm.

use serde::Deserialize;

use super::{CombSource, DlmConfig, NoiseSpec, OpticalLinePlant};
use crate::basis::{hat_basis, knot_frequencies, project, ALPHA_KNOTS};
use crate::error::{Error, Result};
use crate::line::{
    gamma_from_aeff, AmpMode, EdfaModel, Element, FiberSpan, Line, LumpedLoss, NfCurve, NodeLoss, Segment,
    TaggedElement,
};
use crate::qot::{ModulationFormat, TransceiverModel};
use crate::spectral::{FrequencyGrid, SpectralProfile, Unit};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantFile {
    name: String,
    #[serde(default)]
    grid: GridFile,
    #[serde(default)]
    ripple: RippleFile,
    #[serde(default)]
    alpha_shape: AlphaShapeFile,
    comb: CombFile,
    ete: EteFile,
    #[serde(default)]
    dlm: DlmConfig,
    #[serde(default)]
    noise: NoiseSpec,
    #[serde(rename = "element")]
    elements: Vec<ElementFile>,
    #[serde(default, rename = "transceiver")]
    transceivers: Vec<TrxFile>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GridFile {
    f_center_first_thz: f64,
    spacing_ghz: f64,
    n_channels: usize,
    ref_bandwidth_ghz: f64,
    symbol_rate_gbd: f64,
    dlm_slots: Option<[usize; 2]>,
}

impl Default for GridFile {
    fn default() -> Self {
        let g = FrequencyGrid::default();
        Self {
            f_center_first_thz: g.f_center_first / 1e12,
            spacing_ghz: g.channel_spacing / 1e9,
            n_channels: g.n_channels,
            ref_bandwidth_ghz: g.ref_bandwidth / 1e9,
            symbol_rate_gbd: g.symbol_rate / 1e9,
            dlm_slots: g.dlm_slots,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RippleFile {
    peak_to_peak_db: f64,
    seed: u64,
    values_db: Option<Vec<f64>>,
}

impl Default for RippleFile {
    fn default() -> Self {
        Self { peak_to_peak_db: 0.0, seed: 0, values_db: None }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AlphaShapeFile {
    /// Offsets of α(f) at uniformly spaced knots, dB/km.
    offsets_db_km: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CombFile {
    psd_dbm_per_slot: f64,
    #[serde(default)]
    blocked_slots: Vec<usize>,
    #[serde(default)]
    wss_attenuation_db: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EteFile {
    launch_total_dbm: f64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ElementFile {
    Span {
        id: String,
        segment: Segment,
        length_km: f64,
        a_eff_um2: f64,
        dispersion_ps_nm_km: f64,
        gamma_w_km: Option<f64>,
        total_loss_db: Option<f64>,
        alpha_db_km: Option<f64>,
        #[serde(default)]
        in_connector_db: f64,
        #[serde(default)]
        out_connector_db: f64,
        #[serde(default)]
        lumped: Vec<[f64; 2]>,
        #[serde(default = "yes")]
        alpha_shape: bool,
    },
    Edfa {
        id: String,
        segment: Segment,
        mode: AmpMode,
        #[serde(default)]
        gain_db: f64,
        #[serde(default)]
        tilt_db: f64,
        #[serde(default)]
        power_dbm: f64,
        nf_db: Option<f64>,
        nf_curve: Option<Vec<[f64; 2]>>,
        #[serde(default)]
        ripple_scale: f64,
        #[serde(default = "default_max_power")]
        max_output_power_dbm: f64,
    },
    Node {
        id: String,
        segment: Segment,
        loss_db: f64,
    },
}

fn yes() -> bool {
    true
}

fn default_max_power() -> f64 {
    25.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrxFile {
    id: String,
    slot: usize,
    snr_trx_db: f64,
    #[serde(default)]
    symbol_rate_gbd: Option<f64>,
    #[serde(default = "qam16")]
    mf: ModulationFormat,
}

fn qam16() -> ModulationFormat {
    ModulationFormat::Qam16
}

fn plant_err(msg: impl Into<String>) -> Error {
    Error::Plant(msg.into())
}

/// Parses and validates a plant description.
pub fn parse_plant(text: &str) -> Result<OpticalLinePlant> {
    let f: PlantFile = toml::from_str(text).map_err(|e| plant_err(e.to_string()))?;
    let g = &f.grid;
    let mut grid = FrequencyGrid::new(g.f_center_first_thz * 1e12, g.spacing_ghz * 1e9, g.n_channels)?;
    grid.ref_bandwidth = g.ref_bandwidth_ghz * 1e9;
    grid.symbol_rate = g.symbol_rate_gbd * 1e9;
    grid.dlm_slots = g.dlm_slots;
    grid.validate()?;

    let shape = alpha_shape(&grid, &f.alpha_shape.offsets_db_km)?;
    let mut elements = Vec::with_capacity(f.elements.len());
    for e in f.elements {
        elements.push(convert_element(e, &grid, &shape)?);
    }
    let mut line = Line::new(grid, elements);
    line.shared_ripple = ripple(&grid, &f.ripple)?;

    let wss = match f.comb.wss_attenuation_db {
        Some(v) => SpectralProfile::new(grid, v, Unit::Db)?,
        None => SpectralProfile::constant(grid, 0.0, Unit::Db),
    };
    let comb = CombSource {
        ase_psd_dbm_per_slot: f.comb.psd_dbm_per_slot,
        wss_attenuation: wss,
        blocked_slots: f.comb.blocked_slots,
    };
    let transceivers = f
        .transceivers
        .into_iter()
        .map(|t| TransceiverModel {
            trx_id: t.id,
            slot: t.slot,
            mf: t.mf,
            symbol_rate: t.symbol_rate_gbd.map(|r| r * 1e9).unwrap_or(grid.symbol_rate),
            snr_trx_db: t.snr_trx_db,
            b2b_curve: Vec::new(),
        })
        .collect();
    let plant = OpticalLinePlant {
        name: f.name,
        line,
        transceivers,
        comb,
        ete_launch_total_dbm: f.ete.launch_total_dbm,
        noise: f.noise,
        dlm: f.dlm,
    };
    plant.validate()?;
    Ok(plant)
}

/// Zero-mean α(f) offsets interpolated on the grid, returned as knots.
fn alpha_shape(grid: &FrequencyGrid, offsets: &[f64]) -> Result<Vec<(f64, f64)>> {
    if offsets.is_empty() {
        return Ok(vec![(grid.f_mid(), 0.0)]);
    }
    if offsets.len() != ALPHA_KNOTS {
        return Err(plant_err(format!("alpha_shape needs {ALPHA_KNOTS} offsets")));
    }
    let knots = knot_frequencies(grid, ALPHA_KNOTS);
    let basis = hat_basis(grid, &knots);
    let mean =
        (0..grid.n_channels).map(|i| (0..ALPHA_KNOTS).map(|k| basis[k][i] * offsets[k]).sum::<f64>()).sum::<f64>()
            / grid.n_channels as f64;
    Ok(knots.into_iter().zip(offsets.iter().map(|o| o - mean)).collect())
}

fn convert_element(e: ElementFile, grid: &FrequencyGrid, shape: &[(f64, f64)]) -> Result<TaggedElement> {
    Ok(match e {
        ElementFile::Span {
            id,
            segment,
            length_km,
            a_eff_um2,
            dispersion_ps_nm_km,
            gamma_w_km,
            total_loss_db,
            alpha_db_km,
            in_connector_db,
            out_connector_db,
            lumped,
            alpha_shape,
        } => {
            if !(length_km > 0.0) {
                return Err(plant_err(format!("span {id}: length must be positive")));
            }
            let lumped: Vec<LumpedLoss> =
                lumped.into_iter().map(|[position_km, loss_db]| LumpedLoss { position_km, loss_db }).collect();
            let lumped_sum: f64 = lumped.iter().map(|l| l.loss_db).sum();
            let alpha_mean = match (total_loss_db, alpha_db_km) {
                (Some(total), None) => (total - in_connector_db - out_connector_db - lumped_sum) / length_km,
                (None, Some(a)) => a,
                _ => return Err(plant_err(format!("span {id}: give exactly one of total_loss_db, alpha_db_km"))),
            };
            if alpha_mean < 0.0 {
                return Err(plant_err(format!("span {id}: losses exceed the total")));
            }
            let alpha_knots = if alpha_shape {
                shape.iter().map(|&(f, o)| (f, alpha_mean + o)).collect()
            } else {
                vec![(grid.f_mid(), alpha_mean)]
            };
            let span = FiberSpan {
                span_id: id,
                length_km,
                alpha_knots,
                dispersion_ps_nm_km,
                gamma_w_km: gamma_w_km.unwrap_or_else(|| gamma_from_aeff(a_eff_um2)),
                a_eff_um2,
                in_connector_db,
                out_connector_db,
                lumped_losses: lumped,
            };
            span.validate()?;
            TaggedElement { segment, element: Element::Span(span) }
        }
        ElementFile::Edfa {
            id,
            segment,
            mode,
            gain_db,
            tilt_db,
            power_dbm,
            nf_db,
            nf_curve,
            ripple_scale,
            max_output_power_dbm,
        } => {
            let nf_curve = match (nf_db, nf_curve) {
                (Some(nf), None) => NfCurve::flat(nf),
                (None, Some(c)) => NfCurve(c.into_iter().map(|[g, nf]| (g, nf)).collect()),
                _ => return Err(plant_err(format!("EDFA {id}: give exactly one of nf_db, nf_curve"))),
            };
            let e = EdfaModel {
                edfa_id: id,
                mode,
                target_gain_db: gain_db,
                tilt_db,
                setpoint_power_dbm: power_dbm,
                nf_curve,
                ripple_scale,
                max_output_power_dbm,
                gain_range_db: (5.0, 30.0),
            };
            e.validate()?;
            TaggedElement { segment, element: Element::Edfa(e) }
        }
        ElementFile::Node { id, segment, loss_db } => {
            TaggedElement { segment, element: Element::Node(NodeLoss { node_id: id, loss_db }) }
        }
    })
}

fn ripple(grid: &FrequencyGrid, r: &RippleFile) -> Result<SpectralProfile> {
    if let Some(v) = &r.values_db {
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        return SpectralProfile::new(*grid, v.iter().map(|x| x - mean).collect(), Unit::Db);
    }
    Ok(SpectralProfile { grid: *grid, values: default_ripple(grid, r.peak_to_peak_db, r.seed), unit: Unit::Db })
}

/// Three seeded sinusoids across the band, stripped of anything a
/// piecewise-linear α(f) could explain, scaled to the requested peak-to-peak.
pub fn default_ripple(grid: &FrequencyGrid, peak_to_peak_db: f64, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let n = grid.n_channels;
    if peak_to_peak_db == 0.0 || n < ALPHA_KNOTS + 2 {
        return vec![0.0; n];
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = {
        let comps: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (rng.random_range(0.5..1.0), rng.random_range(3.0..9.0), rng.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        (0..n)
            .map(|i| {
                let x = i as f64 / (n - 1) as f64;
                comps.iter().map(|(a, cycles, ph)| a * (std::f64::consts::TAU * cycles * x + ph).sin()).sum()
            })
            .collect()
    };
    let basis = hat_basis(grid, &knot_frequencies(grid, ALPHA_KNOTS));
    let (_, resid) = project(&raw, &basis);
    let (lo, hi) = resid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mean = resid.iter().sum::<f64>() / n as f64;
    resid.iter().map(|v| (v - mean) * peak_to_peak_db / (hi - lo)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ripple_shape() {
        let g = FrequencyGrid::default();
        let r = default_ripple(&g, 1.0, 7);
        let mean = r.iter().sum::<f64>() / 40.0;
        let pp = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - r.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(mean.abs() < 1e-12);
        assert!((pp - 1.0).abs() < 1e-12);
        assert_eq!(r, default_ripple(&g, 1.0, 7));
    }

    #[test]
    fn rejects_ambiguous_loss() {
        let text = r#"
name = "x"
comb = { psd_dbm_per_slot = -16.0 }
ete = { launch_total_dbm = 0.0 }
[[element]]
kind = "span"
id = "S"
segment = "carrier_link"
length_km = 10.0
a_eff_um2 = 80.0
dispersion_ps_nm_km = 17.0
total_loss_db = 3.0
alpha_db_km = 0.2
"#;
        assert!(matches!(parse_plant(text), Err(Error::Plant(_))));
    }
}
