//! Run configuration: geometry, channel statistics and every learning
//! hyperparameter, read from a TOML file with nested sections.
//!
//! Powers are given in dBm in the file and converted to linear watts with
//! `P[W] = 10^((P[dBm] - 30) / 10)`; see [`dbm_to_watts`]. Unknown keys are
//! rejected. The config hash is the SHA-256 of the canonical JSON encoding
//! of the fully resolved config (defaults filled in), so two files that
//! differ only in formatting or in spelling out a default hash equal.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gbdt::GbdtParams;
use crate::oracle::BcdSettings;
use crate::rft::RftSettings;
use crate::saab::SaabSettings;

/// `10^((dbm - 30) / 10)` watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Geometry, antenna counts and power levels in linear units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// BS antenna count `M`.
    pub bs_antennas: usize,
    /// Antennas at the reflection-side user `r`.
    pub user_r_antennas: usize,
    /// Antennas at the transmission-side user `t`.
    pub user_t_antennas: usize,
    pub ris_horizontal: usize,
    pub ris_vertical: usize,
    pub bs_position: [f64; 3],
    pub ris_position: [f64; 3],
    pub user_r_position: [f64; 3],
    pub user_t_position: [f64; 3],
    /// Downlink noise power (W).
    pub noise_power: f64,
    /// Uplink pilot noise power (W).
    pub uplink_noise_power: f64,
    /// BS transmit power budget (W).
    pub transmit_power: f64,
    /// Pilot energy per user per symbol (W).
    pub pilot_power: f64,
    pub streams: usize,
}

impl SystemConfig {
    /// Number of STAR-RIS elements `N = N_h * N_v`.
    pub fn ris_elements(&self) -> usize {
        self.ris_horizontal * self.ris_vertical
    }

    /// Pilot count `N_p = N_r + N_t`.
    pub fn pilot_count(&self) -> usize {
        self.user_r_antennas + self.user_t_antennas
    }

    pub fn validate(&self) -> Result<()> {
        if self.bs_antennas == 0 {
            return Err(Error::Config("bs_antennas must be >= 1".into()));
        }
        if self.user_r_antennas == 0 || self.user_t_antennas == 0 {
            return Err(Error::Config("user antenna counts must be >= 1".into()));
        }
        if self.ris_horizontal == 0 || self.ris_vertical == 0 {
            return Err(Error::Config("RIS grid dimensions must be >= 1".into()));
        }
        if self.streams != 1 {
            return Err(Error::Config(format!(
                "only single-stream broadcast is supported (streams = {})",
                self.streams
            )));
        }
        for (name, p) in [
            ("noise_power", self.noise_power),
            ("uplink_noise_power", self.uplink_noise_power),
            ("transmit_power", self.transmit_power),
            ("pilot_power", self.pilot_power),
        ] {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {p}")));
            }
        }
        Ok(())
    }

    fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    pub fn bs_ris_distance(&self) -> f64 {
        Self::distance(self.bs_position, self.ris_position)
    }

    pub fn ris_user_r_distance(&self) -> f64 {
        Self::distance(self.ris_position, self.user_r_position)
    }

    pub fn ris_user_t_distance(&self) -> f64 {
        Self::distance(self.ris_position, self.user_t_position)
    }

    /// Moves user `r` along the RIS -> user `r` ray so that it sits `distance` meters from the RIS.
    pub fn with_user_r_distance(&self, distance: f64) -> Result<Self> {
        let current = self.ris_user_r_distance();
        if !(distance > 0.0) || current == 0.0 {
            return Err(Error::Domain(format!("cannot place user r at distance {distance} (current {current})")));
        }
        let scale = distance / current;
        let mut out = self.clone();
        for k in 0..3 {
            out.user_r_position[k] = self.ris_position[k] + (self.user_r_position[k] - self.ris_position[k]) * scale;
        }
        Ok(out)
    }
}

/// Large-scale and small-scale channel statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// Rician factor (linear). Named apart from the amplitude-level count `amp_levels`.
    pub rician_k: f64,
    pub paths_bs_ris: usize,
    pub paths_ris_r: usize,
    pub paths_ris_t: usize,
    /// Reference gain `L` of `beta = L (d / d0)^-zeta`.
    pub pathloss_ref: f64,
    pub ref_distance: f64,
    pub pathloss_exponent: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            rician_k: 10.0,
            paths_bs_ris: 5,
            paths_ris_r: 5,
            paths_ris_t: 5,
            pathloss_ref: 0.1,
            ref_distance: 1.0,
            pathloss_exponent: 2.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rician_k >= 0.0) {
            return Err(Error::Config("rician_k must be >= 0".into()));
        }
        if self.paths_bs_ris == 0 || self.paths_ris_r == 0 || self.paths_ris_t == 0 {
            return Err(Error::Config("NLOS path counts must be >= 1".into()));
        }
        if !(self.ref_distance > 0.0) {
            return Err(Error::Config("ref_distance must be > 0".into()));
        }
        if !(self.pathloss_ref > 0.0) {
            return Err(Error::Config("pathloss_ref must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub bs_antennas: usize,
    pub user_r_antennas: usize,
    pub user_t_antennas: usize,
    pub ris_horizontal: usize,
    pub ris_vertical: usize,
    pub bs_position: [f64; 3],
    pub ris_position: [f64; 3],
    pub user_r_position: [f64; 3],
    pub user_t_position: [f64; 3],
    pub transmit_power_dbm: f64,
    pub noise_dbm: f64,
    /// Defaults to `noise_dbm`.
    pub uplink_noise_dbm: Option<f64>,
    /// When set, pilot power becomes `uplink noise * 10^(pilot_snr_db / 10)`; otherwise 1 W.
    pub pilot_snr_db: Option<f64>,
    pub streams: usize,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            bs_antennas: 8,
            user_r_antennas: 1,
            user_t_antennas: 1,
            ris_horizontal: 4,
            ris_vertical: 4,
            bs_position: [0.0, 20.0, 0.0],
            ris_position: [0.0, 0.0, 0.0],
            user_r_position: [5.0, 10.0, 0.0],
            user_t_position: [-5.0, -10.0, 0.0],
            transmit_power_dbm: 30.0,
            noise_dbm: -100.0,
            uplink_noise_dbm: None,
            pilot_snr_db: None,
            streams: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoundingSection {
    /// Amplitude levels swept per codeword (`K_amp`).
    pub amp_levels: usize,
}

impl Default for SoundingSection {
    fn default() -> Self {
        Self { amp_levels: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub validation_fraction: f64,
    /// Fresh channels per sweep point.
    pub n_eval: usize,
    /// Training samples used when a sweep point retrains the model.
    pub sweep_train: usize,
    pub retrain_power: bool,
    pub retrain_elements: bool,
    pub retrain_distance: bool,
    /// Samples per checkpoint when generating datasets.
    pub checkpoint_every: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seed: 2024,
            n_train: 2000,
            n_test: 500,
            validation_fraction: 0.1,
            n_eval: 500,
            sweep_train: 2000,
            retrain_power: false,
            retrain_elements: true,
            retrain_distance: true,
            checkpoint_every: 500,
        }
    }
}

/// Full configuration tree as stored on disk.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub system: SystemSection,
    pub channel: ChannelParams,
    pub sounding: SoundingSection,
    pub bcd: BcdSettings,
    pub saab: SaabSettings,
    pub rft: RftSettings,
    pub gbdt: GbdtParams,
    pub experiment: ExperimentSection,
}

impl ConfigFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text` and applies `key.path=value` overrides before deserializing,
    /// so overrides are subject to the same unknown-key check as the file.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let cfg: ConfigFile =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.system()?.validate()?;
        self.channel.validate()?;
        if self.sounding.amp_levels == 0 {
            return Err(Error::Config("sounding.amp_levels must be >= 1".into()));
        }
        self.bcd.validate()?;
        self.saab.validate()?;
        self.rft.validate()?;
        self.gbdt.validate()?;
        let v = self.experiment.validation_fraction;
        if !(0.0..1.0).contains(&v) {
            return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Resolves dBm values into a linear-unit [`SystemConfig`].
    pub fn system(&self) -> Result<SystemConfig> {
        let s = &self.system;
        let noise_power = dbm_to_watts(s.noise_dbm);
        let uplink_noise_power = dbm_to_watts(s.uplink_noise_dbm.unwrap_or(s.noise_dbm));
        let pilot_power = match s.pilot_snr_db {
            Some(snr) => uplink_noise_power * db_to_linear(snr),
            None => 1.0,
        };
        let cfg = SystemConfig {
            bs_antennas: s.bs_antennas,
            user_r_antennas: s.user_r_antennas,
            user_t_antennas: s.user_t_antennas,
            ris_horizontal: s.ris_horizontal,
            ris_vertical: s.ris_vertical,
            bs_position: s.bs_position,
            ris_position: s.ris_position,
            user_r_position: s.user_r_position,
            user_t_position: s.user_t_position,
            noise_power,
            uplink_noise_power,
            transmit_power: dbm_to_watts(s.transmit_power_dbm),
            pilot_power,
            streams: s.streams,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same file with user `r` moved along the RIS -> user `r` ray to `distance` meters.
    pub fn with_user_r_distance(&self, distance: f64) -> Result<Self> {
        let moved = self.system()?.with_user_r_distance(distance)?;
        let mut out = self.clone();
        out.system.user_r_position = moved.user_r_position;
        Ok(out)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes to JSON");
        hex_digest(json.as_bytes())
    }

    /// Hash of only the parts that shape datasets and models (everything except
    /// the experiment section and the transmit power, which the decoder rescales to).
    pub fn shape_hash(&self) -> String {
        let mut c = self.clone();
        c.experiment = ExperimentSection::default();
        c.system.transmit_power_dbm = 0.0;
        c.hash()
    }
}

/// Lowercase hex SHA-256.
pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn apply_override(table: &mut toml::Table, ov: &str) -> Result<()> {
    let (key, raw) =
        ov.split_once('=').ok_or_else(|| Error::Config(format!("override `{ov}` is not key.path=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("empty path segment in `{key}`")));
    }
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry.as_table_mut().ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_conversion() {
        assert_eq!(dbm_to_watts(30.0), 1.0);
        assert!((dbm_to_watts(-100.0) - 1e-13).abs() < 1e-27);
        assert!((watts_to_dbm(1e-3) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn defaults_match_reference_scenario() {
        let cfg = ConfigFile::default();
        let sys = cfg.system().unwrap();
        assert_eq!(sys.bs_antennas, 8);
        assert_eq!(sys.ris_elements(), 16);
        assert_eq!(sys.bs_ris_distance(), 20.0);
        assert!((sys.ris_user_r_distance() - 125f64.sqrt()).abs() < 1e-12);
        assert_eq!(sys.uplink_noise_power, sys.noise_power);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ConfigFile::from_toml_str("[system]\nbs_antenas = 4\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = ConfigFile::from_toml_str("[sytem]\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = ConfigFile::from_toml_with_overrides("", &["gbdt.round=3".to_string()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn overrides_apply_and_change_hash() {
        let base = ConfigFile::from_toml_str("").unwrap();
        let cfg = ConfigFile::from_toml_with_overrides(
            "[system]\nbs_antennas = 4\n",
            &["system.ris_horizontal=2".into(), "bcd.objective=min_rate".into()],
        )
        .unwrap();
        assert_eq!(cfg.system.bs_antennas, 4);
        assert_eq!(cfg.system.ris_horizontal, 2);
        assert_ne!(cfg.hash(), base.hash());
        // spelling out a default does not change the hash
        let spelled = ConfigFile::from_toml_str("[gbdt]\nrounds = 200\n").unwrap();
        assert_eq!(spelled.hash(), base.hash());
    }

    #[test]
    fn toml_round_trip() {
        let cfg =
            ConfigFile::from_toml_with_overrides("", &["system.pilot_snr_db=20".into(), "experiment.seed=9".into()])
                .unwrap();
        let back = ConfigFile::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn pilot_snr_rescales_pilot_power() {
        let cfg =
            ConfigFile::from_toml_with_overrides("", &["system.pilot_snr_db=10".into()]).unwrap().system().unwrap();
        assert!((cfg.pilot_power / cfg.uplink_noise_power - 10.0).abs() < 1e-9);
    }

    #[test]
    fn moving_user_r_keeps_direction() {
        let sys = ConfigFile::default().system().unwrap();
        let moved = sys.with_user_r_distance(30.0).unwrap();
        assert!((moved.ris_user_r_distance() - 30.0).abs() < 1e-12);
        assert_eq!(moved.user_t_position, sys.user_t_position);
        let ratio = moved.user_r_position[0] / moved.user_r_position[1];
        assert!((ratio - 0.5).abs() < 1e-12);
    }
}
