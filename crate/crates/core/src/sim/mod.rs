//! Synthetic multi-platform scenes and the collaborative perception loop.

pub mod episode;
pub mod extract;
pub mod ledger;
pub mod platform;
pub mod render;
pub mod report;
pub mod scene;
pub mod track;

pub use episode::{run_episode, run_episodes, CodecConfig, CollabStrategy, EpisodeConfig, EpisodeResult, FrameOutput};
pub use extract::{extract_instances, Extraction};
pub use ledger::BandwidthLedger;
pub use platform::{Constellation, Platform};
pub use render::{render_oracle_features, VisibilityRecord};
pub use report::{EvalRange, EvalReport};
pub use scene::{generate_scene, Scene, SceneParams};
