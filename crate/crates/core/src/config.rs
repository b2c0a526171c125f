//! Whole-run configuration: plant ratings, controller gains, tolerance
//! ladder, and the scenario to execute, as one JSON document.
//!
//! Every field has a default, so `{}` is a valid config and small files
//! only state what they change. Unknown keys are rejected rather than
//! silently ignored; a typo in a gain name should fail loudly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{DabGains, SpmParams, SystemParams, ToleranceSpec};
use crate::sim::scenario::ScenarioSpec;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub system: SystemParams,
    pub spm: SpmParams,
    pub dab_gains: DabGains,
    /// Per-module component multipliers. `None` means: use the reference
    /// ladder when the scenario asks for tolerances, identity otherwise.
    pub tolerances: Option<ToleranceSpec>,
    pub scenario: ScenarioSpec,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.spm.validate()?;
        self.system.validate(&self.spm)?;
        self.dab_gains.validate(&self.spm)?;
        if let Some(tol) = &self.tolerances {
            tol.validate(self.system.spm_count())?;
        }
        self.scenario.validate()?;
        Ok(())
    }

    /// Multipliers the engine should actually apply for this run.
    pub fn effective_tolerances(&self) -> ToleranceSpec {
        let count = self.system.spm_count();
        if self.scenario.tolerances_enabled {
            self.tolerances
                .clone()
                .unwrap_or_else(|| ToleranceSpec::default_for(count))
        } else {
            ToleranceSpec::unity(count)
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_a_full_default_config() {
        let cfg = Config::from_json_str("{}").unwrap();
        assert_eq!(cfg.system.n_blocks, 6);
        assert_eq!(cfg.spm.f_s1, 20.0e3);
        assert!(cfg.tolerances.is_none());
    }

    #[test]
    fn json_round_trip_preserves_everything() {
        let mut cfg = Config::default();
        cfg.system.n_blocks = 4;
        // Fewer series blocks -> each module carries more of the phase
        // voltage and power; keep the cross-section consistency checks
        // happy.
        cfg.spm.v_ac_nom = cfg.system.v_grid_ll / (3.0f64.sqrt() * 4.0);
        cfg.spm.p_rated = cfg.system.p_rated / 12.0;
        cfg.spm.q_rated = cfg.system.q_rated / 12.0;
        cfg.scenario.duration = 0.75;
        cfg.scenario.tolerances_enabled = true;
        cfg.tolerances = Some(ToleranceSpec::default_for(12));
        let text = cfg.to_json_string().unwrap();
        let back = Config::from_json_str(&text).unwrap();
        assert_eq!(back.system.n_blocks, 4);
        assert_eq!(back.scenario.duration, 0.75);
        assert_eq!(back.tolerances.unwrap().l_multipliers.len(), 12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Config::from_json_str(r#"{"sytem": {}}"#).unwrap_err();
        assert!(matches!(err, Error::Parse(_)), "got {err:?}");
    }

    #[test]
    fn nested_overrides_merge_with_defaults() {
        let cfg = Config::from_json_str(r#"{"spm": {"l_leak": 150e-6}}"#).unwrap();
        assert_eq!(cfg.spm.l_leak, 150.0e-6);
        assert_eq!(cfg.spm.c_mv, 268.0e-6);
    }

    #[test]
    fn cross_section_validation_runs_on_load() {
        // Tolerance table sized for the wrong module count must not load.
        let mut cfg = Config::default();
        cfg.tolerances = Some(ToleranceSpec::default_for(10));
        let text = cfg.to_json_string().unwrap();
        assert!(Config::from_json_str(&text).is_err());
    }

    #[test]
    fn effective_tolerances_resolution() {
        let mut cfg = Config::default();
        let unity = cfg.effective_tolerances();
        assert!(unity.l_multipliers.iter().all(|&m| m == 1.0));

        cfg.scenario.tolerances_enabled = true;
        let ladder = cfg.effective_tolerances();
        assert_eq!(ladder.l_multipliers.len(), 18);
        assert_eq!(ladder.l_multipliers[0], 0.91);
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("isopsim-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cfg.json");
        let cfg = Config::default();
        cfg.save(&path).unwrap();
        let back = Config::load(&path).unwrap();
        assert_eq!(back.system.spm_count(), 18);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_file_error_names_the_path() {
        let err = Config::load(Path::new("/nonexistent/isopsim.json")).unwrap_err();
        assert!(err.to_string().contains("isopsim.json"), "{err}");
    }
}
