//! Closed-form incoherent GN estimate of the nonlinear-interference PSD
//! generated by one span under a flat, fully loaded comb.

use std::f64::consts::{LN_10, PI};

use crate::spectral::SPEED_OF_LIGHT;

/// Span quantities entering the closed form, in SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NliSpan {
    /// 1/(W·m)
    pub gamma: f64,
    /// Field attenuation, 1/m (half the power attenuation).
    pub alpha_field: f64,
    /// m
    pub length: f64,
    /// s²/m
    pub beta2: f64,
}

impl NliSpan {
    /// From engineering units: γ in 1/(W·km), α in dB/km, L in km, D in
    /// ps/(nm·km), evaluated at frequency `f_ref` (Hz).
    pub fn from_engineering(gamma_w_km: f64, alpha_db_km: f64, length_km: f64, d_ps_nm_km: f64, f_ref: f64) -> Self {
        let alpha_power = alpha_db_km * LN_10 / 10.0 / 1e3;
        let lambda = SPEED_OF_LIGHT / f_ref;
        Self {
            gamma: gamma_w_km * 1e-3,
            alpha_field: alpha_power / 2.0,
            length: length_km * 1e3,
            beta2: -(d_ps_nm_km * 1e-6) * lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT),
        }
    }

    /// `(1 - exp(-2αL)) / (2α)`, equal to `L` for a lossless span.
    pub fn effective_length(&self) -> f64 {
        let a2 = 2.0 * self.alpha_field;
        if a2 * self.length < 1e-12 {
            self.length
        } else {
            -(-a2 * self.length).exp_m1() / a2
        }
    }

    /// Asymptotic effective length `1/(2α)`; a lossless span falls back to `L`.
    pub fn asymptotic_length(&self) -> f64 {
        if self.alpha_field == 0.0 {
            self.length
        } else {
            1.0 / (2.0 * self.alpha_field)
        }
    }

    /// NLI PSD (W/Hz) at the channel under test for a flat signal PSD
    /// `psd` (W/Hz) occupying `b_wdm` Hz, referenced to the span input.
    pub fn nli_psd(&self, psd: f64, b_wdm: f64) -> f64 {
        if self.gamma == 0.0 || psd == 0.0 || self.length == 0.0 {
            return 0.0;
        }
        let l_eff = self.effective_length();
        let l_a = self.asymptotic_length();
        let x = PI * PI / 2.0 * self.beta2.abs() * l_a * b_wdm * b_wdm;
        // asinh(x) / (π|β₂|L_a) written as (π/2)·B²·asinh(x)/x so D = 0 is finite.
        8.0 / 27.0 * self.gamma.powi(2) * psd.powi(3) * l_eff.powi(2) * (PI / 2.0) * b_wdm * b_wdm * asinh_over_x(x)
    }
}

/// `asinh(x)/x`, with its series below 1e-6.
fn asinh_over_x(x: f64) -> f64 {
    if x < 1e-6 {
        1.0 - x * x / 6.0
    } else {
        x.asinh() / x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cl1() -> NliSpan {
        NliSpan::from_engineering(1.16, 0.2, 51.86, 17.97, 193.5e12)
    }

    #[test]
    fn zero_gamma_zero_nli() {
        let mut s = cl1();
        s.gamma = 0.0;
        assert_eq!(s.nli_psd(1e-14, 4e12), 0.0);
    }

    #[test]
    fn cubic_in_power() {
        let s = cl1();
        let a = s.nli_psd(1e-14, 4e12);
        let b = s.nli_psd(2e-14, 4e12);
        assert!((b / a - 8.0).abs() < 1e-12);
    }

    #[test]
    fn lossless_and_dispersionless_limits() {
        let mut s = cl1();
        s.alpha_field = 0.0;
        assert_eq!(s.effective_length(), s.length);
        assert!(s.nli_psd(1e-14, 4e12).is_finite());

        let mut s = cl1();
        s.beta2 = 1e-40;
        let near = s.nli_psd(1e-14, 4e12);
        s.beta2 = 0.0;
        let zero = s.nli_psd(1e-14, 4e12);
        assert!(((near - zero) / zero).abs() < 1e-9);
    }

    #[test]
    fn beta2_sign_and_magnitude() {
        let s = cl1();
        // ~ -22.9 ps²/km for D ≈ 18 ps/nm/km at 1549 nm
        assert!(s.beta2 < 0.0);
        assert!((s.beta2 * 1e27 + 22.9).abs() < 0.3, "{}", s.beta2 * 1e27);
    }

    #[test]
    fn effective_length_typical() {
        let s = cl1();
        // 0.2 dB/km over 51.86 km: L_eff ≈ 19.6 km
        assert!((s.effective_length() / 1e3 - 19.6).abs() < 0.2);
    }
}
