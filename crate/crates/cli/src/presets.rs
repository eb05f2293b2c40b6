//! Experiment presets compiled into the binary. The TOML sources live in
//! `crates/cli/presets/`.

use crate::config::{ConfigError, ExperimentConfig};

pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub toml: &'static str,
}

macro_rules! preset {
    ($name:literal, $summary:literal) => {
        Preset {
            name: $name,
            summary: $summary,
            toml: include_str!(concat!("../presets/", $name, ".toml")),
        }
    };
}

pub const PRESETS: &[Preset] = &[
    preset!("line-fixed-p20", "fixed-density line, P = 20%, K 3..17, repCnt 1..3, beta 10/20 Hz, summaries on/off"),
    preset!("line-fixed-p50-p80", "fixed-density line at P = 50% and 80%"),
    preset!("sensitivity", "2^3 factorial (beta, repCnt, maxSumCnt) on fixed-density grids, with regression"),
    preset!("flooding-compare", "VarDis against flooding on fixed-density grids, with queue samples"),
    preset!("line-variable", "variable-density line, K 6..18, periodic and exponential beacons"),
    preset!("dtmc-validate", "variable-density line, always-repeat, simulation next to the Markov chain"),
    preset!("beacon-distribution", "K = 6 variable-density line, periodic against exponential beacons"),
    preset!("grid-capacity", "reliability and delay capacity of variable-density grids, K 5..13"),
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

impl Preset {
    pub fn config(&self) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_toml(self.toml)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_is_named_after_itself() {
        for p in PRESETS {
            let cfg = p.config().unwrap_or_else(|e| panic!("{}: {e}", p.name));
            assert_eq!(cfg.name, p.name);
        }
    }

    #[test]
    fn line_fixed_p20_covers_k_3_to_17() {
        let cfg = find("line-fixed-p20").unwrap().config().unwrap();
        let mut ks: Vec<usize> = cfg.points().iter().map(|p| p.k).collect();
        ks.dedup();
        assert_eq!(ks, (3..=17).collect::<Vec<_>>());
        assert_eq!(cfg.points().len(), 15 * 3 * 2 * 2);
    }

    #[test]
    fn sensitivity_has_twelve_settings_of_eight_runs() {
        let cfg = find("sensitivity").unwrap().config().unwrap();
        assert_eq!(cfg.points().len(), 12 * 8);
        assert!(cfg.points().iter().all(|p| p.max_beacon_size == 300));
    }
}
