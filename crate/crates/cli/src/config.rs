use std::path::Path;

use serde::{Deserialize, Serialize};
use vascnav::env::EnvConfig;
use vascnav::magnet::MagnetConfig;
use vascnav::semi_auto::ControllerConfig;
use vascnav::trainers::{A2cConfig, EvalConfig, PpoConfig};

/// Everything a TOML config file can set, one table per component.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub ppo: PpoConfig,
    pub a2c: A2cConfig,
    pub env: EnvConfig,
    pub eval: EvalConfig,
    pub magnet: MagnetConfig,
    pub controller: ControllerConfig,
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl FileConfig {
    /// Defaults for a run on the built-in benchmark map or a user map.
    pub fn base(builtin_map: bool) -> Self {
        Self {
            env: if builtin_map {
                EnvConfig::desk()
            } else {
                EnvConfig::default()
            },
            ..Self::default()
        }
    }

    /// Applies the keys present in `text` on top of `base`.
    pub fn overlay(base: &Self, text: &str) -> Result<Self, String> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut table = toml::Table::try_from(base).map_err(|e| e.to_string())?;
        merge(&mut table, overlay);
        let cfg: FileConfig = table.try_into().map_err(|e: toml::de::Error| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, base: Self) -> Result<Self, String> {
        match path {
            None => Ok(base),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                Self::overlay(&base, &text).map_err(|e| format!("{}: {e}", p.display()))
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.ppo.validate().map_err(|e| format!("[ppo] {e}"))?;
        self.a2c.validate().map_err(|e| format!("[a2c] {e}"))?;
        self.env.validate().map_err(|e| format!("[env] {e}"))?;
        self.magnet.validate().map_err(|e| format!("[magnet] {e}"))?;
        self.controller.validate().map_err(|e| format!("[controller] {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_keys_keep_base_values() {
        let base = FileConfig::base(true);
        let cfg = FileConfig::overlay(&base, "[ppo]\nlr = 1e-4\n[env]\nmax_steps = 500\n").unwrap();
        assert_eq!(cfg.ppo.lr, 1e-4);
        assert_eq!(cfg.ppo.clip_ratio, base.ppo.clip_ratio);
        assert_eq!(cfg.env.max_steps, 500);
        assert_eq!(cfg.env.agent_radius, EnvConfig::desk().agent_radius);
    }

    #[test]
    fn every_section_is_accepted() {
        let text = "[ppo]\nseed = 3\n[a2c]\nseed = 4\n[env]\nc_wall = -5.0\n[eval]\nepisodes = 7\nstop_at_success = 0.9\n\
                    [magnet]\nsurface_field = 0.2\n[controller]\ntau = 0.5\n";
        let cfg = FileConfig::overlay(&FileConfig::default(), text).unwrap();
        assert_eq!((cfg.ppo.seed, cfg.a2c.seed, cfg.eval.episodes), (3, 4, 7));
        assert_eq!(cfg.eval.stop_at_success, Some(0.9));
        assert_eq!(cfg.magnet.surface_field, 0.2);
        assert_eq!(cfg.controller.tau, 0.5);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let base = FileConfig::default();
        assert!(FileConfig::overlay(&base, "[ppo]\nlearning_rate = 1\n").is_err());
        assert!(FileConfig::overlay(&base, "[optimizer]\nlr = 1\n").is_err());
        assert!(FileConfig::overlay(&base, "[controller]\ncap = -1.0\n").is_err());
        assert!(FileConfig::overlay(&base, "not toml [").is_err());
    }
}
