//! The van Genuchten saturation and conductivity closure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closure parameters together with the boundary data of the unsaturated
/// flow scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VanGenuchtenParams {
    /// Saturated conductivity (m/s).
    pub ks: f64,
    /// Inverse air-entry scale (1/m).
    pub alpha: f64,
    /// Shape exponent in (0, 1).
    pub m: f64,
    /// Gas-pressure head (m).
    pub ug: f64,
    /// Pressure head held on the Dirichlet edge (m).
    pub u0: f64,
    /// Boundary influx (m/s).
    pub q: f64,
}

impl Default for VanGenuchtenParams {
    fn default() -> Self {
        Self {
            ks: 8.25e-4,
            alpha: 0.1,
            m: 0.469,
            ug: 0.0,
            u0: -10.0,
            q: 8.25e-5,
        }
    }
}

impl VanGenuchtenParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ks > 0.0) || !(self.alpha > 0.0) || !(self.m > 0.0 && self.m < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "van Genuchten parameters need ks > 0, alpha > 0, 0 < m < 1 (got ks={}, alpha={}, m={})",
                self.ks, self.alpha, self.m
            )));
        }
        if !(self.ug.is_finite() && self.u0.is_finite() && self.q.is_finite()) {
            return Err(Error::InvalidConfig("van Genuchten boundary data must be finite".into()));
        }
        Ok(())
    }

    /// Effective saturation `s(u)`; equal to 1 for `u >= ug`.
    pub fn saturation(&self, u: f64) -> f64 {
        if u >= self.ug {
            return 1.0;
        }
        let n = 1.0 / (1.0 - self.m);
        (1.0 + (self.alpha * (self.ug - u)).powf(n)).powf(-self.m)
    }

    /// Conductivity `K(u)`; equal to `ks` for `u >= ug`.
    pub fn conductivity(&self, u: f64) -> f64 {
        if u >= self.ug {
            return self.ks;
        }
        let s = self.saturation(u);
        if s <= 0.0 {
            return 0.0;
        }
        let inner = 1.0 - (1.0 - s.powf(1.0 / self.m)).powf(self.m);
        self.ks * s.sqrt() * inner * inner
    }
}

/// Shorthand for [`VanGenuchtenParams::conductivity`].
pub fn van_genuchten_k(u: f64, params: &VanGenuchtenParams) -> f64 {
    params.conductivity(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturation_limit() {
        let p = VanGenuchtenParams::default();
        assert_eq!(p.saturation(p.ug), 1.0);
        assert_eq!(p.conductivity(p.ug), p.ks);
        assert_eq!(p.conductivity(3.0), p.ks);
    }

    #[test]
    fn dry_limit() {
        let p = VanGenuchtenParams::default();
        assert!(p.saturation(-1e8) < 1e-6);
        assert!(p.conductivity(-1e8) < 1e-12 * p.ks);
    }

    #[test]
    fn reference_point_at_minus_ten_metres() {
        let p = VanGenuchtenParams::default();
        let s = p.saturation(-10.0);
        assert!((s - 2f64.powf(-0.469)).abs() < 1e-14);
        assert!((s - 0.7224).abs() < 1e-4);
        let ratio = p.conductivity(-10.0) / p.ks;
        assert!((ratio - 0.0655).abs() < 5e-5, "{ratio}");
    }

    #[test]
    fn conductivity_is_monotone_on_the_unsaturated_branch() {
        let p = VanGenuchtenParams::default();
        let mut prev = 0.0;
        for k in 0..1000 {
            let u = -100.0 + 100.0 * k as f64 / 999.0;
            let kk = p.conductivity(u);
            assert!(kk >= prev, "K decreased at u = {u}");
            prev = kk;
        }
    }

    #[test]
    fn invalid_shape_exponent_is_rejected() {
        let p = VanGenuchtenParams {
            m: 1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
