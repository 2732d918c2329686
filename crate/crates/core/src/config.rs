//! Run configuration, read from TOML.
//!
//! Every section is optional; missing keys take their defaults.
//!
//! ```toml
//! seed = 7
//! strategy = "hlfdc"
//! range = "both"
//! out = "out"
//!
//! [scene]
//! frames = 3
//!
//! [codec]
//! window = 4
//!
//! [codec.kernel]
//! kind = "bilinear"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bev::GridSpec;
use crate::camera::DepthPrior;
use crate::error::{Error, Result};
use crate::sim::episode::ExtractConfig;
use crate::sim::{CodecConfig, CollabStrategy, Constellation, EpisodeConfig, EvalRange, Platform, SceneParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeSelection {
    Short,
    Long,
    #[default]
    Both,
}

impl RangeSelection {
    pub fn ranges(self) -> Vec<EvalRange> {
        match self {
            Self::Short => vec![EvalRange::Short],
            Self::Long => vec![EvalRange::Long],
            Self::Both => vec![EvalRange::Short, EvalRange::Long],
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "short" => Some(Self::Short),
            "long" => Some(Self::Long),
            "both" => Some(Self::Both),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub hidden: usize,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { hidden: 8, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scene seed.
    pub seed: u64,
    pub strategy: CollabStrategy,
    pub range: RangeSelection,
    pub out: PathBuf,
    pub scene: SceneParams,
    pub constellation: Constellation,
    pub grid: GridSpec,
    pub prior: DepthPrior,
    pub codec: CodecConfig,
    pub fusion: FusionConfig,
    pub extract: ExtractConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            strategy: CollabStrategy::Hlfdc,
            range: RangeSelection::Both,
            out: PathBuf::from("out"),
            scene: SceneParams::default(),
            constellation: Constellation::default(),
            grid: GridSpec::default(),
            prior: DepthPrior::default(),
            codec: CodecConfig::default(),
            fusion: FusionConfig::default(),
            extract: ExtractConfig::default(),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    /// Parses and validates; `path` only labels errors.
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            msg: e.message().trim().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.grid.validate()?;
        if !(self.prior.d_max > 0.0) || !(self.prior.epsilon > 0.0) {
            return Err(Error::Config("depth prior needs positive d_max and epsilon".into()));
        }
        let c = &self.codec;
        if c.window == 0 || c.heads == 0 || c.head_dim == 0 || !(c.sharpness > 0.0) {
            return Err(Error::Config(format!(
                "codec window, heads, head_dim and sharpness must be positive (got {}, {}, {}, {})",
                c.window, c.heads, c.head_dim, c.sharpness
            )));
        }
        if !(self.extract.share_threshold > 0.0 && self.extract.share_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "extract share threshold {} must be in (0, 1]",
                self.extract.share_threshold
            )));
        }
        self.constellation.build(self.grid.resolution)?;
        self.episode_config().check(self.strategy)
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            grid: self.grid,
            prior: self.prior,
            codec: self.codec.clone(),
            fusion_hidden: self.fusion.hidden,
            fusion_seed: self.fusion.seed,
            extract: self.extract,
            ranges: self.range.ranges(),
        }
    }

    pub fn platforms(&self) -> Result<Vec<Platform>> {
        self.constellation.build(self.grid.resolution)
    }

    /// Scene parameters with the occlusion pairs hidden from the ego platform.
    pub fn scene_params(&self, platforms: &[Platform]) -> SceneParams {
        let mut p = self.scene.clone();
        if let Some(ego) = platforms.first() {
            p.viewer = ego.ground_position();
        }
        p
    }
}
