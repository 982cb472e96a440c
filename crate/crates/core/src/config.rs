// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! Run configuration. Files are TOML with frequencies in MHz (linear) and
//! times in ns; a file may name a preset and override any subset of it.

use crate::error::{Error, Result};
use crate::model::{mhz, HoleSpec, QGaussianShape, SectionLayout, SpinDensity, SystemParams};
use crate::noise::{NoiseKind, NoiseScope};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub cavity_mhz: f64,
    pub probe_mhz: f64,
    pub spin_mhz: f64,
    pub kappa_mhz: f64,
    pub gamma_mhz: f64,
    pub coupling_mhz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoleConfig {
    /// Centre relative to the spin frequency.
    pub offset_mhz: f64,
    /// Gaussian standard deviation of the dip.
    pub width_mhz: f64,
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub q: f64,
    pub fwhm_mhz: f64,
    pub n_points: usize,
    pub renormalize_after_holes: bool,
    pub holes: Vec<HoleConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub tau_a: f64,
    /// Defaults to the midpoint of [tau_a, tau_c].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_b: Option<f64>,
    pub tau_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsConfig {
    /// Nominal time step (ns); each section rounds it to fit exactly.
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub n_write: usize,
    pub n_read: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub restarts: usize,
    pub seed: u64,
    /// Write power ½Σ|ξ|² in units of κ².
    pub write_power: f64,
    /// Readout power ½Σ|ζ|² in units of κ²; absent leaves ζ free.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout_power: Option<f64>,
    /// Fixed in-bin energy (amplitude²·ns); absent means maximize it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_target: Option<f64>,
    pub delay_budget: f64,
    pub endpoint_budget: f64,
    pub separation: f64,
    pub max_iter: usize,
    pub kkt_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// δη/η₀ with η₀ = κ.
    pub relative: f64,
    pub realizations: usize,
    pub seed: u64,
    pub kind: NoiseKind,
    pub scope: NoiseScope,
    /// Relative amplitudes for the amplitude sweep.
    pub amplitudes: Vec<f64>,
    /// Points per branch of the rebit grid.
    pub rebit_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub system: SystemConfig,
    pub density: DensityConfig,
    pub layout: LayoutConfig,
    pub numerics: NumericsConfig,
    pub basis: BasisConfig,
    pub optimizer: OptimizerConfig,
    pub noise: NoiseConfig,
}

pub const PRESETS: [&str; 2] = ["paper-case-a", "paper-case-b"];

impl RunConfig {
    /// No-hole ensemble, readout straight after the write section.
    pub fn case_a() -> Self {
        Self {
            preset: Some("paper-case-a".into()),
            system: SystemConfig { cavity_mhz: 2691.5, probe_mhz: 2691.5, spin_mhz: 2691.5, kappa_mhz: 0.4, gamma_mhz: 0.0, coupling_mhz: 12.5 },
            density: DensityConfig { q: 1.39, fwhm_mhz: 9.4, n_points: 20_000, renormalize_after_holes: false, holes: Vec::new() },
            layout: LayoutConfig { t1: 0.0, t2: 36.72, t3: 110.15, tau_a: 36.72, tau_b: None, tau_c: 110.15 },
            numerics: NumericsConfig { dt: 0.05 },
            basis: BasisConfig { n_write: 5, n_read: 10 },
            optimizer: OptimizerConfig {
                restarts: 8,
                seed: 1,
                write_power: 1.0,
                readout_power: Some(0.068),
                s_target: None,
                delay_budget: 1e-3,
                endpoint_budget: 1e-3,
                separation: 0.01,
                max_iter: 2000,
                kkt_tol: 1e-8,
            },
            noise: NoiseConfig {
                relative: 0.05,
                realizations: 200,
                seed: 2024,
                kind: NoiseKind::Complex,
                scope: NoiseScope::All,
                amplitudes: (1..=10).map(|i| 0.01 * i as f64).collect(),
                rebit_points: 21,
            },
        }
    }

    /// Two burned holes at ω_s ± Ω and a readout delayed by about 1 μs.
    pub fn case_b() -> Self {
        let mut c = Self::case_a();
        c.preset = Some("paper-case-b".into());
        c.density.holes = [-12.5, 12.5].iter().map(|o| HoleConfig { offset_mhz: *o, width_mhz: 1.5, depth: 1.0 }).collect();
        c.layout = LayoutConfig { t1: 0.0, t2: 73.4, t3: 1174.9, tau_a: 1114.3, tau_b: None, tau_c: 1153.6 };
        c.basis = BasisConfig { n_write: 4, n_read: 60 };
        c.optimizer.readout_power = Some(0.013);
        // a microsecond of free decay cannot be held below ~70 S of cavity energy
        c.optimizer.delay_budget = 1e3;
        c.optimizer.endpoint_budget = 10.0;
        c.optimizer.restarts = 4;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper-case-a" => Ok(Self::case_a()),
            "paper-case-b" => Ok(Self::case_b()),
            _ => Err(Error::Config(format!("unknown preset '{name}' (expected one of {})", PRESETS.join(", ")))),
        }
    }

    /// Parses a TOML document. A `preset` key selects the base values
    /// (default `paper-case-a`); every other key overrides it.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_preset(text, None)
    }

    /// Like [`RunConfig::from_toml_str`], with `fallback` as the base preset
    /// when the document names none.
    pub fn from_toml_with_preset(text: &str, fallback: Option<&str>) -> Result<Self> {
        let mut user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("invalid TOML: {}", e.message().trim())))?;
        let base_name = match user.get("preset") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::Config("preset: must be a string".into())),
            None => fallback.unwrap_or(PRESETS[0]).to_string(),
        };
        user.insert("preset".into(), toml::Value::String(base_name.clone()));
        let base = Self::preset(&base_name)?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(merged)).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner().message().trim()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }

    pub fn validate(&self) -> Result<()> {
        self.system_params()?;
        self.density()?;
        self.layout()?;
        let pos = |name: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(Error::Config(format!("{name} must be > 0, got {v}"))) };
        pos("numerics.dt", self.numerics.dt)?;
        pos("optimizer.write_power", self.optimizer.write_power)?;
        if let Some(p) = self.optimizer.readout_power {
            pos("optimizer.readout_power", p)?;
        }
        if let Some(s) = self.optimizer.s_target {
            pos("optimizer.s_target", s)?;
        }
        pos("optimizer.delay_budget", self.optimizer.delay_budget)?;
        pos("optimizer.endpoint_budget", self.optimizer.endpoint_budget)?;
        pos("optimizer.separation", self.optimizer.separation)?;
        pos("optimizer.kkt_tol", self.optimizer.kkt_tol)?;
        if self.density.n_points < 2 {
            return Err(Error::Config("density.n_points must be >= 2".into()));
        }
        if self.basis.n_write == 0 || self.basis.n_read == 0 {
            return Err(Error::Config("basis.n_write and basis.n_read must be >= 1".into()));
        }
        if self.optimizer.restarts == 0 || self.optimizer.max_iter == 0 {
            return Err(Error::Config("optimizer.restarts and optimizer.max_iter must be >= 1".into()));
        }
        if !(self.noise.relative >= 0.0) || self.noise.amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Config("noise amplitudes must be >= 0".into()));
        }
        if self.noise.realizations == 0 || self.noise.rebit_points == 0 {
            return Err(Error::Config("noise.realizations and noise.rebit_points must be >= 1".into()));
        }
        Ok(())
    }

    pub fn system_params(&self) -> Result<SystemParams> {
        let s = &self.system;
        SystemParams::new(mhz(s.cavity_mhz), mhz(s.probe_mhz), mhz(s.spin_mhz), mhz(s.kappa_mhz), mhz(s.gamma_mhz), mhz(s.coupling_mhz))
    }

    pub fn density(&self) -> Result<SpinDensity> {
        let d = &self.density;
        let center = mhz(self.system.spin_mhz);
        let shape = QGaussianShape::from_fwhm(d.q, mhz(d.fwhm_mhz))?;
        let holes = d.holes.iter().map(|h| HoleSpec { center: center + mhz(h.offset_mhz), width: mhz(h.width_mhz), depth: h.depth }).collect();
        SpinDensity::new(shape, center, holes, d.renormalize_after_holes)
    }

    pub fn layout(&self) -> Result<SectionLayout> {
        let l = &self.layout;
        let out = SectionLayout { t1: l.t1, t2: l.t2, t3: l.t3, tau_a: l.tau_a, tau_b: l.tau_b.unwrap_or(0.5 * (l.tau_a + l.tau_c)), tau_c: l.tau_c };
        out.validate()?;
        Ok(out)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file's contents, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let c = RunConfig::preset(name).unwrap();
            c.validate().unwrap();
            let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
        assert_ne!(RunConfig::case_a().hash(), RunConfig::case_b().hash());
    }

    #[test]
    fn partial_file_overrides_preset() {
        let c = RunConfig::from_toml_str("preset = \"paper-case-b\"\n[numerics]\ndt = 0.1\n[density]\nn_points = 500\n").unwrap();
        assert_eq!(c.numerics.dt, 0.1);
        assert_eq!(c.density.n_points, 500);
        assert_eq!(c.density.holes.len(), 2);
        assert_eq!(c.layout.tau_a, 1114.3);
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::from_toml_str("[numerics]\ndtt = 0.1\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("dtt"), "{e}");
        let e = RunConfig::from_toml_str("[system]\nkappa_mhz = -1.0\n").unwrap_err();
        assert!(e.to_string().contains("kappa"), "{e}");
        let e = RunConfig::from_toml_str("[numerics]\ndt = \"fast\"\n").unwrap_err();
        assert!(e.to_string().contains("numerics.dt"), "{e}");
        let e = RunConfig::from_toml_str("[optimizer]\nrestarts = -3\n").unwrap_err();
        assert!(e.to_string().contains("optimizer.restarts"), "{e}");
        assert!(RunConfig::from_toml_str("preset = \"nope\"").is_err());
        assert!(RunConfig::from_toml_str("[layout]\ntau_a = 200.0\n").is_err());
    }

    #[test]
    fn fallback_preset_applies_when_the_file_names_none() {
        let c = RunConfig::from_toml_with_preset("[numerics]\ndt = 0.1\n", Some("paper-case-b")).unwrap();
        assert_eq!(c.basis.n_read, 60);
        assert_eq!(c.preset.as_deref(), Some("paper-case-b"));
        let c = RunConfig::from_toml_with_preset("preset = \"paper-case-a\"\n", Some("paper-case-b")).unwrap();
        assert_eq!(c.basis.n_read, 10);
    }

    #[test]
    fn case_b_holes_sit_on_the_polaritons() {
        let c = RunConfig::case_b();
        let d = c.density().unwrap();
        let p = c.system_params().unwrap();
        let centers: Vec<f64> = d.holes.iter().map(|h| h.center - p.omega_s).collect();
        assert!((centers[0] + p.coupling).abs() < 1e-12 && (centers[1] - p.coupling).abs() < 1e-12);
    }
}
