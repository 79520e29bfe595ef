//! Run configuration: one sectioned TOML document covering the scenario,
//! physics, reward, learner, ablations and run bookkeeping.
//!
//! Any key can be overridden with `section.key=value` pairs, whose value is
//! parsed as a TOML literal (falling back to a plain string). The command
//! line layer maps environment variables `DSBM_<SECTION>_<KEY>` onto the
//! same mechanism.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asma::{default_profiles, read_profiles, AssignConfig, AuvProfile};
use crate::control::ProtocolConfig;
use crate::env::{EnvConfig, ObservationLayout, PhysicsConfig, ScenarioConfig};
use crate::error::{Error, Result};
use crate::learner::{Ablations, LearnerConfig};
use crate::ocean::{FlowField, FluidParams};
use crate::reward::RewardWeights;
use crate::sonar::SonarParams;

/// Environment variable prefix for overrides.
pub const ENV_PREFIX: &str = "DSBM_";

/// Output locations and evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub output_dir: PathBuf,
    pub eval_episodes: usize,
    /// Seed of the first evaluation episode; episode `k` uses `eval_seed + k`.
    pub eval_seed: u64,
    /// Seeds used by the ablation sweep.
    pub ablation_seeds: Vec<u64>,
    /// Optional vehicle profile table; built-in profiles otherwise.
    pub profiles: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            eval_episodes: 20,
            eval_seed: 10_000,
            ablation_seeds: vec![0, 1, 2, 3, 4],
            profiles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub physics: PhysicsConfig,
    pub fluid: FluidParams,
    pub flow: FlowField,
    pub sonar: SonarParams,
    pub reward: RewardWeights,
    pub observation: ObservationLayout,
    pub learner: LearnerConfig,
    pub ablations: Ablations,
    pub asma: AssignConfig,
    pub protocol: ProtocolConfig,
    pub run: RunSection,
}

impl RunConfig {
    /// Reduced setting that trains in minutes on one core: 4 vehicles and
    /// 2 targets with currents, 800 episodes of 200 steps, vehicles spawned
    /// 70 to 130 m out with enough thrust to close in. The speed ratios are
    /// capped at 1 so that a vehicle starting from rest is not charged more
    /// for accelerating than it gains by tracking.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.scenario = ScenarioConfig {
            n_auvs: 4,
            n_targets: 2,
            current: true,
            episode_length: 200,
        };
        c.physics.spawn_radius = 100.0;
        c.physics.spawn_shell_width = 60.0;
        c.physics.target_spawn_radius = 20.0;
        c.physics.thrust = 400.0;
        c.physics.target_max_speed = 2.0;
        c.fluid.frontal_area = 0.05;
        c.reward.ratio_cap = 1.0;
        c.learner.episodes = 800;
        c.learner.batch_size = 128;
        c.learner.min_buffer = 2000;
        c.learner.update_interval = 100;
        c.run.output_dir = PathBuf::from("runs/desk");
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" | "default" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected full or desk)"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }

    /// Reads a config file layered over `base`: keys absent from the file keep
    /// their value in `base`.
    pub fn load_over(base: &Self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let file: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut merged = base.to_table()?;
        merge(&mut merged, file);
        Self::from_table(merged)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn to_table(&self) -> Result<toml::Table> {
        toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn from_table(t: toml::Table) -> Result<Self> {
        toml::Value::Table(t)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Applies `section.key=value` overrides in order.
    pub fn with_overrides<'a, I>(&self, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut t = self.to_table()?;
        for (key, raw) in overrides {
            let (section, field) = key
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("override key {key:?} must be section.key")))?;
            let sec = t
                .get_mut(section)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| Error::Config(format!("unknown config section {section:?}")))?;
            sec.insert(field.to_string(), parse_literal(raw));
        }
        Self::from_table(t)
    }

    /// Collects `DSBM_<SECTION>_<KEY>` variables as `section.key` overrides.
    pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> Vec<(String, String)> {
        const SECTIONS: [&str; 12] = [
            "scenario",
            "physics",
            "fluid",
            "flow",
            "sonar",
            "reward",
            "observation",
            "learner",
            "ablations",
            "asma",
            "protocol",
            "run",
        ];
        let mut out: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let rest = k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
                let (sec, key) = rest.split_once('_')?;
                SECTIONS.contains(&sec).then(|| (format!("{sec}.{key}"), v))
            })
            .collect();
        out.sort();
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.env_config().validate()?;
        self.learner.validate()?;
        if self.run.eval_episodes == 0 {
            return Err(Error::Config("run eval_episodes must be positive".into()));
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            scenario: self.scenario.clone(),
            physics: self.physics.clone(),
            fluid: self.fluid.clone(),
            flow: self.flow.clone(),
            sonar: self.sonar.clone(),
            reward: self.reward.clone(),
            observation: self.observation.clone(),
            with_shaping: !self.ablations.no_reshaping,
        }
    }

    pub fn profiles(&self) -> Result<Vec<AuvProfile>> {
        let p = match &self.run.profiles {
            Some(path) => {
                let f = std::fs::File::open(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                read_profiles(f)?
            }
            None => default_profiles(self.scenario.n_auvs),
        };
        if p.len() != self.scenario.n_auvs {
            return Err(Error::Config(format!(
                "{} vehicle profiles for a fleet of {}",
                p.len(),
                self.scenario.n_auvs
            )));
        }
        Ok(p)
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.run.eval_episodes as u64).map(|k| self.run.eval_seed + k).collect()
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
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
