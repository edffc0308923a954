//! Span parameters from a longitudinal γ(z)P(z) profile and a-priori span
//! lengths: attenuation at the DLM frequency, mid-span lumped losses, γ·P at
//! each span input and amplifier positions.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::line::{aeff_from_gamma, Line};
use crate::spectral::{db_to_lin, lin_to_db};

pub use crate::plant::DlmProfile;

/// Lower bound on the step-detection threshold, dB.
pub const MIN_STEP_DB: f64 = 0.25;
/// Threshold multiplier on the robust noise scale of the step statistic.
pub const STEP_MAD_FACTOR: f64 = 3.0;
/// Width of each line-fit window used by the step statistic, km.
const FIT_WINDOW_KM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LumpedKind {
    InputConnector,
    MidSpan,
    OutputConnector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedLoss {
    /// Position from the span start, km.
    pub position_km: f64,
    pub loss_db: f64,
    pub kind: LumpedKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanExtract {
    pub span_id: String,
    /// Span start on the profile axis, km.
    pub start_km: f64,
    pub length_km: f64,
    pub alpha_dlm_db_km: f64,
    pub lumped: Vec<DetectedLoss>,
    /// γ·P right after the input connector, 1/km.
    pub gamma_p_in: f64,
    /// Accumulated dispersion, ps/nm.
    pub cd_ps_nm: Option<f64>,
    /// Total power entering the span during the DLM run, dBm.
    #[serde(default)]
    pub launch_dbm: Option<f64>,
}

impl SpanExtract {
    pub fn mid_span_total_db(&self) -> f64 {
        self.lumped.iter().filter(|l| l.kind == LumpedKind::MidSpan).map(|l| l.loss_db).sum()
    }

    pub fn dispersion_ps_nm_km(&self) -> Option<f64> {
        self.cd_ps_nm.map(|cd| cd / self.length_km)
    }
}

/// Dataset 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlmExtract {
    pub spans: Vec<SpanExtract>,
    /// Detected amplifier positions between spans, km.
    pub edfa_positions_km: Vec<f64>,
    pub warnings: Vec<String>,
}

impl DlmExtract {
    pub fn span(&self, id: &str) -> Option<&SpanExtract> {
        self.spans.iter().find(|s| s.span_id == id)
    }

    /// Attaches DLM-reported accumulated dispersion, one value per span.
    pub fn with_cd(mut self, cd_ps_nm: &[f64]) -> Result<Self> {
        if cd_ps_nm.len() != self.spans.len() {
            return Err(Error::Shape(format!("{} CD values for {} spans", cd_ps_nm.len(), self.spans.len())));
        }
        for (s, &cd) in self.spans.iter_mut().zip(cd_ps_nm) {
            s.cd_ps_nm = Some(cd);
        }
        Ok(self)
    }

    /// Attaches the photodiode power entering each span during the DLM run.
    pub fn with_launch(mut self, launch_dbm: &[f64]) -> Result<Self> {
        if launch_dbm.len() != self.spans.len() {
            return Err(Error::Shape(format!("{} launch powers for {} spans", launch_dbm.len(), self.spans.len())));
        }
        for (s, &p) in self.spans.iter_mut().zip(launch_dbm) {
            s.launch_dbm = Some(p);
        }
        Ok(self)
    }
}

/// Theil–Sen slope over several independent segments (pairs never straddle
/// segments), then one intercept per segment as the median residual.
pub fn theil_sen(segments: &[(&[f64], &[f64])]) -> Option<(f64, Vec<f64>)> {
    let mut slopes = Vec::new();
    for (x, y) in segments {
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                if x[j] != x[i] {
                    slopes.push((y[j] - y[i]) / (x[j] - x[i]));
                }
            }
        }
    }
    if slopes.is_empty() {
        return None;
    }
    let slope = median(&mut slopes);
    let intercepts = segments
        .iter()
        .map(|(x, y)| {
            let mut r: Vec<f64> = x.iter().zip(y.iter()).map(|(xi, yi)| yi - slope * xi).collect();
            median(&mut r)
        })
        .collect();
    Some((slope, intercepts))
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ordinary least-squares line through points; returns (slope, intercept).
fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

struct Scales {
    dz: f64,
    sigma: f64,
    /// Half-width of the smoothed transition around a step, in samples.
    gap: usize,
    window: usize,
}

impl Scales {
    fn new(profile: &DlmProfile) -> Self {
        let dz = profile.step_km();
        let sigma = profile.resolution_km.max(dz);
        let gap = ((3.0 * sigma) / dz).ceil() as usize + 1;
        let window = ((FIT_WINDOW_KM / dz).round() as usize).max(5);
        Self { dz, sigma: profile.resolution_km, gap, window }
    }
}

/// Amplifier position near `guess`: steepest rise of the profile.
fn locate_jump(z: &[f64], y: &[f64], guess: f64, sc: &Scales) -> Option<f64> {
    let j0 = ((guess - z[0]) / sc.dz).round() as isize;
    let k = (sc.gap / 3).max(1) as isize;
    let search = sc.gap as isize;
    let n = y.len() as isize;
    let rise =
        |j: isize| -> Option<f64> { (j - k >= 0 && j + k < n).then(|| y[(j + k) as usize] - y[(j - k) as usize]) };
    let (mut best, mut best_j) = (f64::NEG_INFINITY, None);
    for j in (j0 - search)..=(j0 + search) {
        if let Some(r) = rise(j) {
            if r > best {
                best = r;
                best_j = Some(j);
            }
        }
    }
    let j = best_j?;
    if best <= 0.0 {
        return None;
    }
    // Parabolic refinement of the peak.
    let (a, c) = (rise(j - 1), rise(j + 1));
    let offset = match (a, c) {
        (Some(a), Some(c)) if (a - 2.0 * best + c) < 0.0 => 0.5 * (a - c) / (a - 2.0 * best + c),
        _ => 0.0,
    };
    Some(z[j as usize] + offset * sc.dz)
}

/// Gap between the line fitted right of `j` and the one fitted left of it,
/// both evaluated at `z[j]`. Negative for a loss.
fn gap_statistic(z: &[f64], y: &[f64], lo: usize, hi: usize, sc: &Scales) -> Vec<Option<f64>> {
    let min_pts = sc.window / 2;
    (lo..hi)
        .map(|j| {
            let l_end = j.checked_sub(sc.gap)?;
            let l_start = l_end.saturating_sub(sc.window).max(lo);
            let r_start = j + sc.gap;
            let r_end = (r_start + sc.window).min(hi);
            if l_end < l_start + min_pts || r_end < r_start + min_pts {
                return None;
            }
            let (ls, li) = ols(&z[l_start..l_end], &y[l_start..l_end]);
            let (rs, ri) = ols(&z[r_start..r_end], &y[r_start..r_end]);
            Some((rs * z[j] + ri) - (ls * z[j] + li))
        })
        .collect()
}

/// Extracts span parameters from a profile, spans named `span 1..n`.
pub fn extract(profile: &DlmProfile, span_lengths: &[f64]) -> Result<DlmExtract> {
    let ids: Vec<String> = (1..=span_lengths.len()).map(|k| format!("span {k}")).collect();
    extract_named(profile, &ids, span_lengths)
}

/// Extracts using the span ids and lengths of `line`.
pub fn extract_line(profile: &DlmProfile, line: &Line) -> Result<DlmExtract> {
    let ids: Vec<String> = line.spans().map(|s| s.span_id.clone()).collect();
    let lengths: Vec<f64> = line.spans().map(|s| s.length_km).collect();
    extract_named(profile, &ids, &lengths)
}

pub fn extract_named(profile: &DlmProfile, ids: &[String], span_lengths: &[f64]) -> Result<DlmExtract> {
    profile.validate()?;
    if span_lengths.is_empty() || span_lengths.iter().any(|&l| !(l > 0.0)) {
        return Err(domain("span lengths must be positive"));
    }
    let z = &profile.z_km;
    let y = &profile.gamma_p_db;
    let sc = Scales::new(profile);
    let total: f64 = span_lengths.iter().sum();
    let extent = z[z.len() - 1] - z[0];
    let tol = 2.0 * profile.resolution_km.max(sc.dz);
    if (extent - total).abs() > tol {
        return Err(Error::Alignment(format!("profile covers {extent:.2} km, spans sum to {total:.2} km")));
    }

    let mut warnings = Vec::new();
    let mut bounds = vec![z[0]];
    let mut planned = z[0];
    let mut edfa_positions = Vec::new();
    for (k, l) in span_lengths[..span_lengths.len() - 1].iter().enumerate() {
        planned += l;
        let found = locate_jump(z, y, planned, &sc);
        let b = match found {
            Some(p) if (p - planned).abs() <= tol => p,
            _ => {
                warnings.push(format!(
                    "no amplifier jump near {planned:.2} km after {}; using the a-priori position",
                    ids[k]
                ));
                planned
            }
        };
        edfa_positions.push(b);
        bounds.push(b);
    }
    bounds.push(z[0] + extent);

    let idx = |zz: f64| -> usize { (((zz - z[0]) / sc.dz).round().max(0.0) as usize).min(z.len() - 1) };
    let mut fits = Vec::with_capacity(span_lengths.len());
    for k in 0..span_lengths.len() {
        let (s, e) = (bounds[k], bounds[k + 1]);
        let lo = idx(s) + sc.gap;
        let hi = idx(e).saturating_sub(sc.gap);
        if hi <= lo + 4 {
            return Err(Error::Alignment(format!("span {} too short for the profile resolution", ids[k])));
        }
        fits.push(fit_span(z, y, lo, hi, &sc, &ids[k], &mut warnings)?);
    }
    // Refine each amplifier position between the last line of one span and
    // the first line of the next.
    for k in 1..fits.len() {
        let (prev, next) = (&fits[k - 1], &fits[k]);
        let left = |zz: f64| prev.slope * zz + prev.last_intercept;
        let right = |zz: f64| next.slope * zz + next.first_intercept;
        let j = idx(bounds[k]);
        let p = transition_position(z, y, j, &left, &right, &sc);
        if (p - bounds[k]).abs() <= sc.gap as f64 * sc.dz {
            bounds[k] = p;
            edfa_positions[k - 1] = p;
        }
    }
    let spans = fits
        .into_iter()
        .enumerate()
        .map(|(k, f)| {
            let s = bounds[k];
            SpanExtract {
                span_id: ids[k].clone(),
                start_km: s,
                length_km: span_lengths[k],
                alpha_dlm_db_km: -f.slope,
                lumped: f
                    .steps
                    .into_iter()
                    .map(|(z_abs, loss_db)| DetectedLoss { position_km: z_abs - s, loss_db, kind: LumpedKind::MidSpan })
                    .collect(),
                gamma_p_in: db_to_lin(f.slope * s + f.first_intercept),
                cd_ps_nm: None,
                launch_dbm: None,
            }
        })
        .collect();
    Ok(DlmExtract { spans, edfa_positions_km: edfa_positions, warnings })
}

struct SpanFit {
    slope: f64,
    first_intercept: f64,
    last_intercept: f64,
    /// (absolute position km, loss dB)
    steps: Vec<(f64, f64)>,
}

/// Line fits and step detection inside one span; samples `lo..hi` are free
/// of the amplifier transitions at both ends.
#[allow(clippy::too_many_arguments)]
fn fit_span(
    z: &[f64],
    y: &[f64],
    lo: usize,
    hi: usize,
    sc: &Scales,
    id: &str,
    warnings: &mut Vec<String>,
) -> Result<SpanFit> {
    let gaps = gap_statistic(z, y, lo, hi, sc);
    let mut vals: Vec<f64> = gaps.iter().flatten().copied().collect();
    let threshold = if vals.is_empty() {
        MIN_STEP_DB
    } else {
        let med = median(&mut vals.clone());
        let mut dev: Vec<f64> = vals.iter_mut().map(|v| (*v - med).abs()).collect();
        (STEP_MAD_FACTOR * 1.4826 * median(&mut dev)).max(MIN_STEP_DB)
    };

    // Candidates by decreasing strength, suppressing neighbours.
    let mut order: Vec<(usize, f64)> =
        gaps.iter().enumerate().filter_map(|(i, g)| g.map(|g| (lo + i, -g))).filter(|&(_, s)| s > threshold).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    let radius = 2 * sc.gap;
    let mut steps: Vec<usize> = Vec::new();
    let mut merged = false;
    for (j, _) in order {
        if steps.iter().all(|&s| s.abs_diff(j) > radius) {
            steps.push(j);
        } else if is_local_peak(&gaps, j - lo) && steps.iter().all(|&s| s != j) {
            merged = true;
        }
    }
    if merged {
        warnings.push(format!("{id}: lumped losses closer than the resolution were merged"));
    }
    steps.sort_unstable();

    loop {
        let (slope, intercepts) = fit_segments(z, y, lo, hi, &steps, sc)?;
        // Drop the weakest step that no longer clears the threshold.
        let mut weakest: Option<(usize, f64)> = None;
        for i in 0..steps.len() {
            let h = intercepts[i] - intercepts[i + 1];
            if h < threshold && weakest.is_none_or(|w| h < w.1) {
                weakest = Some((i, h));
            }
        }
        if let Some((i, _)) = weakest {
            steps.remove(i);
            continue;
        }
        let found = steps
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                let (a, b) = (intercepts[i], intercepts[i + 1]);
                let pos = transition_position(z, y, j, &|zz| slope * zz + a, &|zz| slope * zz + b, sc);
                (pos, a - b)
            })
            .collect();
        return Ok(SpanFit {
            slope,
            first_intercept: intercepts[0],
            last_intercept: intercepts[intercepts.len() - 1],
            steps: found,
        });
    }
}

/// Strict local minimum of the gap statistic (a separate loss candidate).
fn is_local_peak(gaps: &[Option<f64>], i: usize) -> bool {
    let g = |k: usize| gaps.get(k).copied().flatten().unwrap_or(f64::INFINITY);
    let here = g(i);
    i > 0 && here < g(i - 1) && here < g(i + 1)
}

/// Common slope and per-segment intercepts between the given steps.
fn fit_segments(z: &[f64], y: &[f64], lo: usize, hi: usize, steps: &[usize], sc: &Scales) -> Result<(f64, Vec<f64>)> {
    let mut segs = Vec::with_capacity(steps.len() + 1);
    let mut a = lo;
    for &j in steps {
        segs.push((a, j.saturating_sub(sc.gap).max(a)));
        a = (j + sc.gap).min(hi);
    }
    segs.push((a, hi));
    let data: Vec<(&[f64], &[f64])> = segs.iter().map(|&(a, b)| (&z[a..b], &y[a..b])).collect();
    if data.iter().all(|(x, _)| x.len() < 2) {
        return Err(Error::Alignment("no step-free samples to fit".into()));
    }
    let (slope, mut intercepts) = theil_sen(&data).ok_or_else(|| Error::Alignment("degenerate span fit".into()))?;
    // A segment too short to hold samples inherits its neighbour's level.
    for i in 0..segs.len() {
        if data[i].0.is_empty() {
            intercepts[i] = if i > 0 { intercepts[i - 1] } else { intercepts[i + 1] };
        }
    }
    Ok((slope, intercepts))
}

/// Location of a transition from line `before` to line `after` near sample
/// `j`: integrating the completed fraction across a symmetric window gives
/// the distance from the window end back to the transition.
fn transition_position(
    z: &[f64],
    y: &[f64],
    j: usize,
    before: &dyn Fn(f64) -> f64,
    after: &dyn Fn(f64) -> f64,
    sc: &Scales,
) -> f64 {
    let a = j.saturating_sub(sc.gap);
    let b = (j + sc.gap).min(z.len() - 1);
    let mut acc = 0.0;
    for i in a..b {
        let zm = z[i] + 0.5 * sc.dz;
        let ym = 0.5 * (y[i] + y[i + 1]);
        let h = after(zm) - before(zm);
        let f = if h != 0.0 { ((ym - before(zm)) / h).clamp(0.0, 1.0) } else { 0.5 };
        acc += f * sc.dz;
    }
    let p = z[b] - acc;
    // A slope change across the transition shifts the integral by c·σ²/h.
    let c = (after(p + 1.0) - before(p + 1.0)) - (after(p) - before(p));
    let h = after(p) - before(p);
    if h.abs() > 1e-9 {
        p + c * sc.sigma * sc.sigma / h
    } else {
        p
    }
}

/// Piecewise-linear profile implied by an extract, on the grid `z_km`.
pub fn reconstruct(ex: &DlmExtract, z_km: &[f64]) -> Vec<f64> {
    z_km.iter()
        .map(|&zz| {
            let k = ex.spans.iter().rposition(|s| s.start_km <= zz).unwrap_or(0);
            let s = &ex.spans[k];
            let local = zz - s.start_km;
            let lumped: f64 = s.lumped.iter().filter(|l| l.position_km < local).map(|l| l.loss_db).sum();
            lin_to_db(s.gamma_p_in) - s.alpha_dlm_db_km * local - lumped
        })
        .collect()
}

/// RMS difference between two profiles sampled on the same grid, skipping
/// samples within `radius_km` of any excluded position.
pub fn rms_excluding(z_km: &[f64], a: &[f64], b: &[f64], exclude_km: &[f64], radius_km: f64) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for ((zz, x), y) in z_km.iter().zip(a).zip(b) {
        if exclude_km.iter().any(|e| (zz - e).abs() <= radius_km) {
            continue;
        }
        acc += (x - y).powi(2);
        n += 1;
    }
    (acc / n.max(1) as f64).sqrt()
}

/// γ and A_eff from the DLM γ·P at the span input, the output power of the
/// amplifier feeding the span and its input connector loss.
pub fn separate_gamma_power(gamma_p_in: f64, edfa_pout_dbm: f64, in_connector_db: f64) -> Result<(f64, f64)> {
    let p_in_w = db_to_lin(edfa_pout_dbm - in_connector_db) * 1e-3;
    if !(p_in_w > 0.0) || !p_in_w.is_finite() {
        return Err(domain(format!("resolved span input power {p_in_w} W is not positive")));
    }
    if !(gamma_p_in > 0.0) {
        return Err(domain("γ·P must be positive"));
    }
    let gamma = gamma_p_in / p_in_w;
    Ok((gamma, aeff_from_gamma(gamma)))
}
