//! Parameter vector ↔ carrier-link model, and the simulated view of one
//! telemetry record.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::basis::{hat_basis, knot_frequencies, ALPHA_KNOTS};
use crate::dlm::{DlmExtract, LumpedKind};
use crate::error::{Error, Result};
use crate::gn::{propagate, LineState};
use crate::line::{Element, Line, LineSettings, LumpedLoss, NfCurve};
use crate::plant::{hole_osnr, CombSource};
use crate::spectral::{db_to_lin, lin_to_db, SpectralProfile, Unit};

/// DLM quantities a span keeps fixed during calibration.
#[derive(Debug, Clone)]
pub(crate) struct SpanAnchor {
    pub id: String,
    pub length_km: f64,
    pub alpha_dlm: f64,
    /// γ·P right after the input connector, 1/km.
    pub gamma_p_in: f64,
    /// Total power ahead of the input connector during the DLM run, dBm.
    pub dlm_launch_dbm: Option<f64>,
    /// Fiber-record nonlinearity, 1/(W·km).
    pub gamma_w_km: f64,
}

/// Layout of the calibration vector:
/// `[ᾱ, l0, lL] per span | 4 free α-shape knots | NF knots per amp | ripple`.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub spans: Vec<SpanAnchor>,
    pub amps: Vec<(String, Vec<f64>)>,
    pub knots: Vec<f64>,
    /// Slot-average weight of each α knot hat.
    knot_weight: Vec<f64>,
    /// α-shape value at the DLM frequency per knot.
    knot_at_dlm: Vec<f64>,
    /// Orthonormal ripple directions, each orthogonal to every knot hat.
    ripple_dirs: Vec<Vec<f64>>,
}

pub(crate) const SHAPE_FREE: usize = ALPHA_KNOTS - 1;

/// Range the fitted noise figures are confined to, dB.
pub(crate) const NF_RANGE_DB: (f64, f64) = (3.0, 12.0);

/// Unconstrained coordinate → NF in dB, smooth and bounded.
fn nf_from_coord(u: f64) -> f64 {
    let (lo, hi) = NF_RANGE_DB;
    lo + (hi - lo) * 0.5 * (1.0 + u.tanh())
}

fn coord_from_nf(nf: f64) -> f64 {
    let (lo, hi) = NF_RANGE_DB;
    let t = (2.0 * (nf - lo) / (hi - lo) - 1.0).clamp(-0.999_999, 0.999_999);
    t.atanh()
}

impl Layout {
    pub fn new(line: &Line, dlm: &DlmExtract, amps: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let grid = line.grid;
        let knots = knot_frequencies(&grid, ALPHA_KNOTS);
        let hats = hat_basis(&grid, &knots);
        let n = grid.n_channels as f64;
        let knot_weight = hats.iter().map(|h| h.iter().sum::<f64>() / n).collect();
        let f_dlm = grid.dlm_frequency();
        let knot_at_dlm = (0..ALPHA_KNOTS)
            .map(|k| {
                let pts: Vec<(f64, f64)> =
                    knots.iter().enumerate().map(|(j, &f)| (f, if j == k { 1.0 } else { 0.0 })).collect();
                crate::line::interp_clamped(&pts, f_dlm).0
            })
            .collect();
        let mut spans = Vec::new();
        let mut missing = Vec::new();
        for s in line.spans() {
            match dlm.span(&s.span_id) {
                Some(e) => spans.push(SpanAnchor {
                    id: s.span_id.clone(),
                    length_km: s.length_km,
                    alpha_dlm: e.alpha_dlm_db_km,
                    gamma_p_in: e.gamma_p_in,
                    dlm_launch_dbm: e.launch_dbm,
                    gamma_w_km: s.gamma_w_km,
                }),
                None => missing.push(s.span_id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Merge(missing));
        }
        Ok(Self { spans, amps, knots, knot_weight, knot_at_dlm, ripple_dirs: ripple_directions(&hats) })
    }

    pub fn span_block(&self) -> std::ops::Range<usize> {
        0..3 * self.spans.len()
    }

    pub fn shape_block(&self) -> std::ops::Range<usize> {
        let a = 3 * self.spans.len();
        a..a + SHAPE_FREE
    }

    pub fn nf_block(&self) -> std::ops::Range<usize> {
        let a = self.shape_block().end;
        a..a + self.amps.iter().map(|(_, g)| g.len()).sum::<usize>()
    }

    pub fn ripple_block(&self) -> std::ops::Range<usize> {
        let a = self.nf_block().end;
        a..a + self.ripple_dirs.len()
    }

    pub fn len(&self) -> usize {
        self.ripple_block().end
    }

    /// All five α-shape offsets, the last one closing the zero mean.
    pub fn shape(&self, x: &[f64]) -> Vec<f64> {
        let free = &x[self.shape_block()];
        let mut c: Vec<f64> = free.to_vec();
        let s: f64 = free.iter().zip(&self.knot_weight).map(|(c, w)| c * w).sum();
        c.push(-s / self.knot_weight[ALPHA_KNOTS - 1]);
        c
    }

    /// DLM γ·P at the span start implied by the fitted input connector,
    /// minus the measured one, dB.
    pub fn launch_mismatch_db(&self, k: usize, x: &[f64]) -> Option<f64> {
        let a = &self.spans[k];
        let p = a.dlm_launch_dbm?;
        let model = a.gamma_w_km * db_to_lin(p - x[3 * k + 1].max(0.0)) * 1e-3;
        Some(lin_to_db(model) - lin_to_db(a.gamma_p_in))
    }

    pub fn shape_at_dlm(&self, x: &[f64]) -> f64 {
        self.shape(x).iter().zip(&self.knot_at_dlm).map(|(c, w)| c * w).sum()
    }

    pub fn ripple(&self, x: &[f64]) -> Vec<f64> {
        let c = &x[self.ripple_block()];
        let n = self.ripple_dirs.first().map_or(0, Vec::len);
        (0..n).map(|i| self.ripple_dirs.iter().zip(c).map(|(d, c)| d[i] * c).sum()).collect()
    }

    /// Reads a vector back from a line (inverse of `apply` up to clamping).
    pub fn encode(&self, line: &Line) -> Vec<f64> {
        let grid = line.grid;
        let mut x = vec![0.0; self.len()];
        for (k, a) in self.spans.iter().enumerate() {
            let s = line.span(&a.id).expect("layout built from this line");
            x[3 * k] = s.alpha_mean(&grid);
            x[3 * k + 1] = s.in_connector_db;
            x[3 * k + 2] = s.out_connector_db;
        }
        // Shape: average deviation of the spans' α from their means at each knot.
        let shape_start = self.shape_block().start;
        for k in 0..SHAPE_FREE {
            let f = self.knots[k];
            let dev: f64 = self
                .spans
                .iter()
                .map(|a| {
                    let s = line.span(&a.id).expect("layout built from this line");
                    s.alpha_at(f) - s.alpha_mean(&grid)
                })
                .sum::<f64>()
                / self.spans.len().max(1) as f64;
            x[shape_start + k] = dev;
        }
        let mut i = self.nf_block().start;
        for (id, gains) in &self.amps {
            let e = line.edfa(id).expect("layout built from this line");
            for &g in gains {
                x[i] = coord_from_nf(e.nf_curve.at(g).0);
                i += 1;
            }
        }
        let r0 = self.ripple_block().start;
        for (j, d) in self.ripple_dirs.iter().enumerate() {
            x[r0 + j] = d.iter().zip(&line.shared_ripple.values).map(|(a, b)| a * b).sum();
        }
        x
    }

    /// Writes `x` into a copy of `base`. Lumped losses and dispersion come
    /// from the DLM extract; γ stays at the fiber record.
    pub fn apply(&self, base: &Line, dlm: &DlmExtract, x: &[f64]) -> Line {
        let mut line = base.clone();
        let shape = self.shape(x);
        for (k, a) in self.spans.iter().enumerate() {
            let s = line.span_mut(&a.id).expect("layout built from this line");
            let mean = x[3 * k].max(0.0);
            s.alpha_knots = self.knots.iter().zip(&shape).map(|(&f, &o)| (f, (mean + o).max(0.0))).collect();
            s.in_connector_db = x[3 * k + 1].max(0.0);
            s.out_connector_db = x[3 * k + 2].max(0.0);
            if let Some(e) = dlm.span(&a.id) {
                s.lumped_losses = e
                    .lumped
                    .iter()
                    .filter(|l| l.kind == LumpedKind::MidSpan)
                    .map(|l| LumpedLoss { position_km: l.position_km, loss_db: l.loss_db })
                    .collect();
                if let Some(d) = e.dispersion_ps_nm_km() {
                    s.dispersion_ps_nm_km = d;
                }
            }
        }
        let mut i = self.nf_block().start;
        for (id, gains) in &self.amps {
            let pts: Vec<(f64, f64)> = gains
                .iter()
                .map(|&g| {
                    let v = (g, nf_from_coord(x[i]));
                    i += 1;
                    v
                })
                .collect();
            if let Some(Element::Edfa(e)) = line.element_mut(id) {
                e.nf_curve = if pts.len() == 1 { NfCurve::flat(pts[0].1) } else { NfCurve(pts) };
            }
        }
        line.shared_ripple = SpectralProfile { grid: line.grid, values: self.ripple(x), unit: Unit::Db };
        line
    }
}

/// Orthonormal basis of the complement of the hat span.
fn ripple_directions(hats: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = hats.first().map_or(0, Vec::len);
    let m = hats.len();
    let a = DMatrix::from_fn(n, m, |i, k| hats[k][i]);
    // Projector onto the complement, then an eigenbasis of its unit eigenvalues.
    let p =
        DMatrix::identity(n, n) - &a * (a.transpose() * &a).try_inverse().expect("hats independent") * a.transpose();
    let eig = nalgebra::SymmetricEigen::new(p);
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .filter(|&j| eig.eigenvalues[j] > 0.5)
        .map(|j| eig.eigenvectors.column(j).iter().copied().collect())
        .collect();
    // Deterministic sign so encodings are reproducible.
    for d in &mut dirs {
        let k = d.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map_or(0, |(k, _)| k);
        if d[k] < 0.0 {
            d.iter_mut().for_each(|v| *v = -*v);
        }
    }
    dirs
}

/// What the monitors would report for a record under a model.
#[derive(Debug, Clone)]
pub(crate) struct SimRecord {
    pub rx_dbm: Vec<f64>,
    pub osnr_db: Vec<f64>,
    pub pin: BTreeMap<String, f64>,
    pub pout: BTreeMap<String, f64>,
}

pub(crate) fn simulate(line: &Line, comb: &CombSource, settings: &LineSettings) -> Result<SimRecord> {
    let grid = line.grid;
    let prop = propagate(line, &LineState::from_dbm(&comb.launch_dbm()), settings)?;
    let rx = prop.output().osa_dbm(&grid);
    let osnr = hole_osnr(&rx, &comb.blocked_slots, &grid);
    let mut pin = BTreeMap::new();
    let mut pout = BTreeMap::new();
    for st in &prop.stages {
        if st.realized_gain_db.is_some() {
            pin.insert(st.element_id.clone(), st.input_total_dbm);
            pout.insert(st.element_id.clone(), st.output_total_dbm);
        }
    }
    Ok(SimRecord { rx_dbm: rx, osnr_db: osnr, pin, pout })
}
