//! Configuration, the scaling function and config validation.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ensure, Error, Result};
use crate::geom::MAX_DIM;
use crate::pointprocess::truncation_radius;

/// Truncation radius of the simulated region: either fixed or computed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum TruncRadius {
    #[default]
    Auto,
    Fixed(f64),
}

impl TruncRadius {
    pub fn value(&self) -> Option<f64> {
        match self {
            TruncRadius::Auto => None,
            TruncRadius::Fixed(r) => Some(*r),
        }
    }
}

impl Serialize for TruncRadius {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TruncRadius::Auto => s.serialize_str("auto"),
            TruncRadius::Fixed(r) => s.serialize_f64(*r),
        }
    }
}

impl<'de> Deserialize<'de> for TruncRadius {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(r) => Ok(TruncRadius::Fixed(r)),
            Raw::Int(r) => Ok(TruncRadius::Fixed(r as f64)),
            Raw::Str(s) if s == "auto" => Ok(TruncRadius::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("trunc_radius must be a number or \"auto\", got {s:?}"))),
        }
    }
}

fn default_eps() -> f64 {
    1e-3
}
fn default_step() -> f64 {
    1.0
}
fn default_depth() -> u32 {
    10
}
fn default_samples() -> u64 {
    10_000
}

/// Parameters shared by every experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub d: usize,
    pub lambda: f64,
    pub r: f64,
    pub horizon: f64,
    #[serde(default)]
    pub trunc_radius: TruncRadius,
    #[serde(default = "default_eps")]
    pub trunc_eps: f64,
    /// Base time step; epochs are bisected until segments are at most this long.
    #[serde(default = "default_step")]
    pub step: f64,
    /// Extra bisection levels below the base step.
    #[serde(default = "default_depth")]
    pub refine_depth: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_samples")]
    pub n_samples: u64,
    /// Bound on the target position over the horizon (`L_t`).
    #[serde(default)]
    pub set_bound: f64,
}

impl SimConfig {
    pub fn new(d: usize, lambda: f64, r: f64, horizon: f64) -> SimConfig {
        SimConfig {
            d,
            lambda,
            r,
            horizon,
            trunc_radius: TruncRadius::Auto,
            trunc_eps: default_eps(),
            step: default_step().min(horizon),
            refine_depth: default_depth(),
            master_seed: 0,
            n_samples: default_samples(),
            set_bound: 0.0,
        }
    }

    /// Parse the `[sim]` section of a TOML document.
    pub fn from_toml_str(doc: &str) -> Result<SimConfig> {
        #[derive(Deserialize)]
        struct Doc {
            sim: SimConfig,
        }
        let doc: Doc = toml::from_str(doc)?;
        Ok(doc.sim)
    }

    /// Truncation radius after validation.
    pub fn radius(&self) -> f64 {
        self.trunc_radius.value().expect("validated config has a truncation radius")
    }

    pub fn scaling(&self) -> ScalingKind {
        ScalingKind { d: self.d }
    }
}

/// The scaling function attached to a dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingKind {
    pub d: usize,
}

impl ScalingKind {
    pub fn psi(&self, t: f64) -> Result<f64> {
        psi(self.d, t)
    }

    /// The exponent regressor `t / psi_d(t)`.
    pub fn regressor(&self, t: f64) -> Result<f64> {
        Ok(t / psi(self.d, t)?)
    }
}

/// `sqrt(t)` for d = 1, `ln t` for d = 2 and 1 for d >= 3.
pub fn psi(d: usize, t: f64) -> Result<f64> {
    ensure!(d >= 1, Domain, "dimension must be at least 1");
    ensure!(t > 0.0 && t.is_finite(), Domain, "psi requires finite t > 0, got {t}");
    match d {
        1 => Ok(t.sqrt()),
        2 => {
            ensure!(t > 1.0, Domain, "psi for d = 2 requires t > 1 so that ln t > 0, got {t}");
            Ok(t.ln())
        }
        _ => Ok(1.0),
    }
}

/// Check every invariant and fill `trunc_radius` when it is `auto`.
pub fn validate_config(raw: SimConfig) -> Result<SimConfig> {
    let c = raw;
    ensure!((1..=MAX_DIM).contains(&c.d), Config, "d must lie in 1..={MAX_DIM}, got {}", c.d);
    ensure!(c.lambda > 0.0 && c.lambda.is_finite(), Config, "lambda must be finite and > 0, got {}", c.lambda);
    ensure!(c.r > 0.0 && c.r.is_finite(), Config, "r must be finite and > 0, got {}", c.r);
    ensure!(c.horizon > 0.0 && c.horizon.is_finite(), Config, "horizon must be finite and > 0, got {}", c.horizon);
    ensure!(c.trunc_eps > 0.0 && c.trunc_eps < 1.0, Config, "trunc_eps must lie in (0, 1), got {}", c.trunc_eps);
    ensure!(c.step > 0.0 && c.step <= c.horizon, Config, "step must satisfy 0 < step <= horizon, got {}", c.step);
    ensure!(c.refine_depth <= 30, Config, "refine_depth must be at most 30, got {}", c.refine_depth);
    ensure!(c.n_samples >= 1, Config, "n_samples must be at least 1");
    ensure!(c.set_bound >= 0.0 && c.set_bound.is_finite(), Config, "set_bound must be finite and >= 0, got {}", c.set_bound);
    let reach = c.set_bound + c.r;
    let trunc_radius = match c.trunc_radius {
        TruncRadius::Fixed(r) => {
            ensure!(r.is_finite() && r >= reach, Config, "trunc_radius must be >= set_bound + r = {reach}, got {r}");
            TruncRadius::Fixed(r)
        }
        TruncRadius::Auto => TruncRadius::Fixed(truncation_radius(&c, c.set_bound, c.trunc_eps).map_err(|e| Error::Config(e.to_string()))?),
    };
    Ok(SimConfig { trunc_radius, ..c })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_values() {
        assert_eq!(psi(1, 16.0).unwrap(), 4.0);
        assert_eq!(psi(3, 1000.0).unwrap(), 1.0);
        let e2 = std::f64::consts::E.powi(2);
        assert!((psi(2, e2).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn psi_domain() {
        assert!(psi(2, 1.0).is_err());
        assert!(psi(2, 0.5).is_err());
        assert!(psi(1, 0.0).is_err());
        assert!(psi(3, -1.0).is_err());
    }

    #[test]
    fn rejects_zero_lambda() {
        let err = validate_config(SimConfig::new(1, 0.0, 1.0, 1.0)).unwrap_err();
        assert!(err.to_string().contains("lambda"));
    }

    #[test]
    fn auto_radius_matches_direct_call() {
        let c = SimConfig::new(1, 1.0, 1.0, 100.0);
        let direct = truncation_radius(&c, 0.0, 1e-3).unwrap();
        let v = validate_config(c).unwrap();
        assert_eq!(v.trunc_radius, TruncRadius::Fixed(direct));
    }

    #[test]
    fn validation_is_idempotent() {
        let once = validate_config(SimConfig::new(2, 1.0, 1.0, 10.0)).unwrap();
        let twice = validate_config(once.clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn small_radius_rejected() {
        let mut c = SimConfig::new(2, 1.0, 1.0, 10.0);
        c.set_bound = 2.0;
        c.trunc_radius = TruncRadius::Fixed(2.5);
        assert!(validate_config(c).is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let doc = "[sim]\nd = 2\nlambda = 1.0\nr = 1\nhorizon = 10\ntrunc_radius = \"auto\"\nmaster_seed = 7\n";
        let c = SimConfig::from_toml_str(doc).unwrap();
        assert_eq!(c.d, 2);
        assert_eq!(c.r, 1.0);
        assert_eq!(c.trunc_radius, TruncRadius::Auto);
        let back = toml::to_string(&c).unwrap();
        let again: SimConfig = toml::from_str(&back).unwrap();
        assert_eq!(c, again);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn psi_monotone(t1 in 1.001f64..1e6, dt in 1e-3f64..1e3) {
                for d in 1..=2 {
                    prop_assert!(psi(d, t1 + dt).unwrap() > psi(d, t1).unwrap());
                }
                prop_assert_eq!(psi(4, t1).unwrap(), psi(4, t1 + dt).unwrap());
            }

            #[test]
            fn validate_idempotent(d in 1usize..4, lambda in 0.1f64..3.0, r in 0.2f64..2.0, t in 0.5f64..50.0) {
                let once = validate_config(SimConfig::new(d, lambda, r, t)).unwrap();
                prop_assert_eq!(validate_config(once.clone()).unwrap(), once);
            }
        }
    }
}
