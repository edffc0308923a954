//! Transceiver-aware QoT: pre-FEC BER ↔ SNR for the modulation format,
//! harmonic SNR composition, back-to-back fitting and relative Q reports.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::spectral::{db_to_lin, lin_to_db};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationFormat {
    Qam16,
    /// Not implemented yet.
    Qam32,
    /// Not implemented yet.
    Qam64,
}

impl ModulationFormat {
    /// BER at SNR → 0.
    fn ber_ceiling(self) -> Result<f64> {
        match self {
            ModulationFormat::Qam16 => Ok(0.375),
            other => Err(domain(format!("{other:?} BER mapping not implemented"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransceiverModel {
    pub trx_id: String,
    /// Grid slot carrying this transceiver.
    pub slot: usize,
    pub mf: ModulationFormat,
    pub symbol_rate: f64,
    /// `+inf` for a noise-free transceiver.
    #[serde(with = "crate::serde_float")]
    pub snr_trx_db: f64,
    /// (OSNR dB, BER) back-to-back points.
    #[serde(default)]
    pub b2b_curve: Vec<(f64, f64)>,
}

/// Pre-FEC BER for a linear SNR. For 16QAM: `(3/8)·erfc(sqrt(SNR/10))`.
pub fn ber_from_snr(snr_linear: f64, mf: ModulationFormat) -> Result<f64> {
    if !(snr_linear >= 0.0) {
        return Err(domain(format!("SNR must be non-negative, got {snr_linear}")));
    }
    Ok(mf.ber_ceiling()? * libm::erfc((snr_linear / 10.0).sqrt()))
}

/// Linear SNR producing `ber`: bracketing bisection, then Newton on `ln BER`.
pub fn snr_from_ber(ber: f64, mf: ModulationFormat) -> Result<f64> {
    let ceiling = mf.ber_ceiling()?;
    if !(ber > 0.0 && ber < ceiling) {
        return Err(domain(format!("BER {ber} outside (0, {ceiling})")));
    }
    let target = ber.ln();
    let ln_ber = |s: f64| (ceiling * libm::erfc((s / 10.0).sqrt())).ln();
    // erfc(sqrt(s/10)) is monotone decreasing in s.
    let (mut lo, mut hi) = (0.0, 1.0);
    while ln_ber(hi) > target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(domain(format!("BER {ber} below representable range")));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ln_ber(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..8 {
        if s <= 0.0 {
            break;
        }
        let x = (s / 10.0).sqrt();
        let erfc = libm::erfc(x);
        // d/ds ln erfc(sqrt(s/10)) = -(2/√π)·e^{-x²}/erfc(x) · 1/(20x)
        let d = -(2.0 / std::f64::consts::PI.sqrt()) * (-x * x).exp() / erfc / (20.0 * x);
        let step = (ln_ber(s) - target) / d;
        let next = s - step;
        if !(next > lo && next < hi) {
            break;
        }
        s = next;
        if step.abs() <= 1e-15 * s {
            break;
        }
    }
    Ok(s)
}

/// Harmonic combination of SNR terms given in dB; `+inf` terms drop out.
pub fn combine_snr(components_db: &[f64]) -> f64 {
    let inv: f64 = components_db.iter().map(|&c| if c == f64::INFINITY { 0.0 } else { 1.0 / db_to_lin(c) }).sum();
    if inv == 0.0 {
        f64::INFINITY
    } else {
        -lin_to_db(inv)
    }
}

/// Fitted transceiver SNRs above this are reported as noise-free.
pub const NOISE_FREE_DB: f64 = 40.0;

/// Least-squares transceiver SNR from back-to-back (OSNR dB, BER) points.
/// OSNR is referenced to `ref_bandwidth` and converted to SNR with
/// `ref_bandwidth / symbol_rate`. Returns `+inf` above [`NOISE_FREE_DB`].
pub fn fit_b2b(curve: &[(f64, f64)], ref_bandwidth: f64, symbol_rate: f64, mf: ModulationFormat) -> Result<f64> {
    if curve.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 back-to-back points, got {}", curve.len())));
    }
    let bw = ref_bandwidth / symbol_rate;
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .map(|&(osnr_db, ber)| Ok((db_to_lin(osnr_db) * bw, snr_from_ber(ber, mf)?)))
        .collect::<Result<_>>()?;
    let bers: Vec<f64> = curve.iter().map(|p| p.1).collect();
    let spread = bers.iter().cloned().fold(f64::MIN, f64::max) / bers.iter().cloned().fold(f64::MAX, f64::min);
    if spread < 1.0 + 1e-9 {
        return Err(Error::Fit("back-to-back curve is flat".into()));
    }
    let sse = |trx_db: f64| -> f64 {
        let inv_trx = 1.0 / db_to_lin(trx_db);
        pts.iter().map(|&(snr_osnr, measured)| (measured - 1.0 / (inv_trx + 1.0 / snr_osnr)).powi(2)).sum()
    };
    // Coarse scan, then golden section on the best bracket.
    let grid: Vec<f64> = (0..=120).map(|k| k as f64 * 0.5).collect();
    let best = grid.iter().cloned().enumerate().min_by(|a, b| sse(a.1).total_cmp(&sse(b.1))).unwrap().0;
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(grid.len() - 1)];
    let r = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-9 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if sse(c) < sse(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let fit = 0.5 * (a + b);
    Ok(if fit > NOISE_FREE_DB { f64::INFINITY } else { fit })
}

/// One channel of a relative-Q report, all values in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QChannel {
    pub label: String,
    #[serde(with = "crate::serde_float")]
    pub snr_predicted_db: f64,
    #[serde(default, with = "opt_float")]
    pub snr_measured_db: Option<f64>,
    #[serde(with = "crate::serde_float")]
    pub relative_q_predicted_db: f64,
    #[serde(default, with = "opt_float")]
    pub relative_q_measured_db: Option<f64>,
}

impl QChannel {
    /// Predicted minus measured relative Q.
    pub fn error_db(&self) -> Option<f64> {
        self.relative_q_measured_db.map(|m| self.relative_q_predicted_db - m)
    }
}

/// Relative Q values share one subtraction offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QReport {
    pub offset_db: f64,
    pub channels: Vec<QChannel>,
}

/// Subtracts `offset_db` from every absolute SNR. Q is reported as the
/// relative SNR in dB.
pub fn relative_q(
    labels: &[String],
    predicted_db: &[f64],
    measured_db: Option<&[f64]>,
    offset_db: f64,
) -> Result<QReport> {
    if labels.len() != predicted_db.len() || measured_db.is_some_and(|m| m.len() != predicted_db.len()) {
        return Err(Error::Shape("relative Q inputs differ in length".into()));
    }
    let channels = predicted_db
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let m = measured_db.map(|m| m[i]);
            QChannel {
                label: labels[i].clone(),
                snr_predicted_db: p,
                snr_measured_db: m,
                relative_q_predicted_db: p - offset_db,
                relative_q_measured_db: m.map(|m| m - offset_db),
            }
        })
        .collect();
    Ok(QReport { offset_db, channels })
}

impl QReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "channel,snr_predicted_db,snr_measured_db,relative_q_predicted_db,relative_q_measured_db,error_db\n",
        );
        for c in &self.channels {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{:.6},{},{:.6},{},{}\n",
                c.label,
                c.snr_predicted_db,
                opt(c.snr_measured_db),
                c.relative_q_predicted_db,
                opt(c.relative_q_measured_db),
                opt(c.error_db())
            ));
        }
        s
    }
}

mod opt_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match x {
            Some(v) => crate::serde_float::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct W(#[serde(with = "crate::serde_float")] f64);
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ModulationFormat::Qam16;

    #[test]
    fn ber_examples() {
        let b = ber_from_snr(10.0, Qam16).unwrap();
        assert!((b / 5.8987e-2 - 1.0).abs() < 1e-4);
        assert_eq!(ber_from_snr(0.0, Qam16).unwrap(), 0.375);
        assert!(ber_from_snr(1e4, Qam16).unwrap() < 1e-200);
        assert!(ber_from_snr(-1.0, Qam16).is_err());
        assert!(ber_from_snr(10.0, ModulationFormat::Qam64).is_err());
    }

    #[test]
    fn inverse_examples() {
        let s = snr_from_ber(ber_from_snr(10.0, Qam16).unwrap(), Qam16).unwrap();
        assert!((s - 10.0).abs() < 1e-10);
        // 18.66721783845700661 from a 30-digit root of (3/8)·erfc(sqrt(s/10)) = 0.02
        let s = snr_from_ber(2e-2, Qam16).unwrap();
        assert!((s - 18.667_217_838_457).abs() < 1e-9, "{s}");
        assert!(snr_from_ber(0.0, Qam16).is_err());
        assert!(snr_from_ber(0.4, Qam16).is_err());
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine_snr(&[20.0, f64::INFINITY, f64::INFINITY]), 20.0);
        assert!((combine_snr(&[20.0, 20.0]) - 16.989_700_043_360_19).abs() < 1e-9);
        assert!((combine_snr(&[15.0, 30.0]) - 14.86).abs() < 0.005);
        assert_eq!(combine_snr(&[f64::INFINITY]), f64::INFINITY);
    }

    fn synth_curve(trx_db: f64, jitter: &[f64]) -> Vec<(f64, f64)> {
        let bw = 12.5e9 / 63.1e9;
        (0..8)
            .map(|k| {
                let osnr = 16.0 + 2.0 * k as f64;
                let snr = combine_snr(&[trx_db, osnr + lin_to_db(bw)]);
                (osnr + jitter.get(k).copied().unwrap_or(0.0), ber_from_snr(db_to_lin(snr), Qam16).unwrap())
            })
            .collect()
    }

    #[test]
    fn b2b_roundtrip() {
        let fit = fit_b2b(&synth_curve(20.0, &[]), 12.5e9, 63.1e9, Qam16).unwrap();
        assert!((fit - 20.0).abs() < 0.01, "{fit}");
        let free = fit_b2b(&synth_curve(f64::INFINITY, &[]), 12.5e9, 63.1e9, Qam16).unwrap();
        assert!(free.is_infinite());
    }

    #[test]
    fn b2b_jitter_tolerance() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let n = Normal::new(0.0, 0.1).unwrap();
        for seed in 0..20 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let jitter: Vec<f64> = (0..8).map(|_| n.sample(&mut rng)).collect();
            let fit = fit_b2b(&synth_curve(20.0, &jitter), 12.5e9, 63.1e9, Qam16).unwrap();
            assert!((fit - 20.0).abs() < 0.2, "seed {seed}: {fit}");
        }
    }

    #[test]
    fn b2b_errors() {
        assert!(fit_b2b(&[(20.0, 1e-3); 3], 12.5e9, 63.1e9, Qam16).is_err());
        assert!(fit_b2b(&[(20.0, 1e-3); 5], 12.5e9, 63.1e9, Qam16).is_err());
    }

    #[test]
    fn relative_q_offsets_cancel() {
        let labels: Vec<String> = (0..4).map(|i| format!("TRx{i}")).collect();
        let pred = [15.0, 15.5, 14.2, 16.0];
        let meas = [14.8, 15.6, 14.0, 15.7];
        let r0 = relative_q(&labels, &pred, Some(&meas), 0.0).unwrap();
        for c in &r0.channels {
            assert_eq!(c.relative_q_predicted_db, c.snr_predicted_db);
        }
        for off in [5.0, 13.7] {
            let r = relative_q(&labels, &pred, Some(&meas), off).unwrap();
            for (a, b) in r.channels.iter().zip(&r0.channels) {
                assert!((a.error_db().unwrap() - b.error_db().unwrap()).abs() < 1e-12);
            }
        }
        assert_eq!(r0.channels.len(), 4);
        assert!(relative_q(&labels, &pred[..3], None, 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ber_roundtrip(log_ber in -6.0f64..-0.53) {
                let b = 10f64.powf(log_ber);
                let s = snr_from_ber(b, Qam16).unwrap();
                let back = ber_from_snr(s, Qam16).unwrap();
                prop_assert!(((back - b) / b).abs() < 1e-12);
            }

            #[test]
            fn combine_bounds(a in 0.0f64..40.0, b in 0.0f64..40.0, c in 0.0f64..40.0) {
                let x = combine_snr(&[a, b, c]);
                prop_assert!(x <= a.min(b).min(c) + 1e-12);
                prop_assert!((x - combine_snr(&[c, a, b])).abs() < 1e-12);
                prop_assert!(combine_snr(&[a + 1.0, b, c]) >= x);
            }
        }
    }
}
