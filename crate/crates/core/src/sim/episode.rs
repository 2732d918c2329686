//! Per-frame pipelines for every collaboration strategy.

use ndarray::{Array3, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::extract::{extract_instances, normalize_occupancy, rasterize_boxes, ExtractParams, Extraction};
use super::ledger::BandwidthLedger;
use super::platform::Platform;
use super::render::{render_oracle_features, RenderOutput, VisibilityRecord, FEATURE_CHANNELS, SIGNATURE_CHANNELS};
use super::report::{evaluate, EvalRange, EvalReport};
use super::scene::Scene;
use super::track::Tracker;
use crate::bev::{lift_and_splat, BevFrame, DepthDistribution, GridSpec, SplatGeometry};
use crate::camera::DepthPrior;
use crate::error::{Error, Result};
use crate::fusion::{decode_packet, decode_raw_map, fuse_collaborators, Collaborator, FusionWeightNet, UpsampleKernel};
use crate::hlfdc::{
    AttentionParams, FrequencyPacket, HlfdcCodec, PacketHeader, RawMapMessage, WirePose, HEADER_LEN,
};
use crate::metrics::{DetectionBox, InstanceMap};

/// What platforms exchange, if anything.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollabStrategy {
    /// Ego alone.
    None,
    /// Raw image features and depth, lifted jointly at the receiver.
    Early,
    /// Detected boxes, merged by confidence.
    Late,
    /// Uncompressed BEV feature maps.
    Full,
    /// High/low-frequency packets.
    Hlfdc,
}

impl CollabStrategy {
    pub const ALL: [CollabStrategy; 5] = [Self::None, Self::Early, Self::Late, Self::Full, Self::Hlfdc];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Early => "early",
            Self::Late => "late",
            Self::Full => "full",
            Self::Hlfdc => "hlfdc",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl std::fmt::Display for CollabStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Bytes per box on a late-collaboration link: center, size, yaw,
/// confidence as `f32` and the class as `u32`.
pub const BOX_WIRE_BYTES: usize = 36;
/// Merge radius for late collaboration (one BEV cell).
pub const LATE_MERGE_RADIUS: f64 = 0.75;
/// Gate for carrying a track id to the next frame.
pub const TRACK_GATE: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub window: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Query/key gain of the type-selective attention.
    pub sharpness: f64,
    pub kernel: UpsampleKernel,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            window: 4,
            heads: 4,
            head_dim: 8,
            sharpness: 8.0,
            kernel: UpsampleKernel::Box,
        }
    }
}

impl CodecConfig {
    /// Codec whose attention groups cells of the same kind (ground, each
    /// class, void) and carries their signatures: the high band keeps the
    /// second signature block, the low band the first.
    pub fn build(&self) -> Result<HlfdcCodec> {
        let keys = |base: usize| (base..base + 5).collect::<Vec<_>>();
        let values = |base: usize| (base..base + SIGNATURE_CHANNELS).collect::<Vec<_>>();
        let make = |base: usize| {
            AttentionParams::type_selective(
                FEATURE_CHANNELS,
                self.heads,
                self.head_dim,
                FEATURE_CHANNELS / 2,
                &keys(base),
                &values(base),
                self.sharpness,
            )
            .map_err(|e| Error::Config(format!("codec cannot carry the signature: {e}")))
        };
        Ok(HlfdcCodec {
            high: make(SIGNATURE_CHANNELS)?,
            low: make(0)?,
            window: self.window,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub grid: GridSpec,
    pub prior: DepthPrior,
    pub codec: CodecConfig,
    pub fusion_hidden: usize,
    pub fusion_seed: u64,
    pub extract: ExtractConfig,
    pub ranges: Vec<EvalRange>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub share_threshold: f32,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { share_threshold: 0.5 }
    }
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            prior: DepthPrior::default(),
            codec: CodecConfig::default(),
            fusion_hidden: 8,
            fusion_seed: 7,
            extract: ExtractConfig::default(),
            ranges: vec![EvalRange::Short, EvalRange::Long],
        }
    }
}

impl EpisodeConfig {
    fn extract_params(&self) -> ExtractParams {
        ExtractParams {
            share_threshold: self.extract.share_threshold,
            ..ExtractParams::default()
        }
    }

    /// Checks the grid and, for HLFDC, that the codec fits the grid.
    pub fn check(&self, strategy: CollabStrategy) -> Result<()> {
        self.grid.validate()?;
        let (x, y) = self.grid.dims();
        if x > u16::MAX as usize || y > u16::MAX as usize {
            return Err(Error::Config(format!("{x}×{y} grid does not fit the packet header")));
        }
        if self.fusion_hidden == 0 {
            return Err(Error::Config("fusion network needs a hidden layer".into()));
        }
        if strategy == CollabStrategy::Hlfdc {
            let m = self.codec.window;
            if m == 0 || x % m != 0 || y % m != 0 {
                return Err(Error::Config(format!(
                    "HLFDC window {m} does not divide the {x}×{y} BEV grid"
                )));
            }
            self.codec.build()?;
        }
        Ok(())
    }
}

/// Outputs of one frame at the ego platform.
#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub frame: usize,
    /// Ego-BEV coordinates.
    pub boxes: Vec<DetectionBox>,
    pub instances: InstanceMap,
    /// Ground truth `(object id, box)` inside the ego grid, ego-BEV coordinates.
    pub gt_boxes: Vec<(u32, DetectionBox)>,
    /// Single-platform detections, each in its own BEV frame.
    pub platform_boxes: Vec<Vec<DetectionBox>>,
    /// Per platform, in platform order.
    pub visibility: Vec<VisibilityRecord>,
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub strategy: CollabStrategy,
    pub frames: Vec<FrameOutput>,
    /// Predicted instance maps with track ids.
    pub tracks: Vec<InstanceMap>,
    pub gt_tracks: Vec<InstanceMap>,
    pub ledger: BandwidthLedger,
    pub report: EvalReport,
}

/// Everything the platforms observe in one frame.
struct Observations {
    renders: Vec<RenderOutput>,
    depths: Vec<DepthDistribution>,
    frames: Vec<BevFrame>,
    /// Normalized signature maps in each platform's own frame.
    local: Vec<Array3<f32>>,
    local_extractions: Vec<Extraction>,
}

fn observe(platforms: &[Platform], scene: &Scene, t: usize, cfg: &EpisodeConfig) -> Result<Observations> {
    let objects = &scene.frames[t];
    let per: Vec<(RenderOutput, DepthDistribution, BevFrame, Array3<f32>, Extraction)> = platforms
        .par_iter()
        .map(|p| {
            let render = render_oracle_features(p, objects, cfg.grid.z_range, &cfg.prior)?;
            let depth = render.depth_distribution(cfg.grid.depth_bins)?;
            let frame = p.bev_frame(cfg.grid.resolution);
            let mut map = splat_into(p, &render, &depth, &frame, cfg)?;
            normalize_occupancy(map.view_mut());
            let ex = extract_instances(map.view(), &cfg.grid, &cfg.extract_params());
            Ok((render, depth, frame, map, ex))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut obs = Observations {
        renders: Vec::new(),
        depths: Vec::new(),
        frames: Vec::new(),
        local: Vec::new(),
        local_extractions: Vec::new(),
    };
    for (r, d, f, m, e) in per {
        obs.renders.push(r);
        obs.depths.push(d);
        obs.frames.push(f);
        obs.local.push(m);
        obs.local_extractions.push(e);
    }
    Ok(obs)
}

fn splat_into(
    p: &Platform,
    render: &RenderOutput,
    depth: &DepthDistribution,
    frame: &BevFrame,
    cfg: &EpisodeConfig,
) -> Result<Array3<f32>> {
    let geo = SplatGeometry {
        intrinsics: &p.intrinsics,
        pose: &p.pose,
        spec: &cfg.grid,
        frame,
        prior: &cfg.prior,
    };
    Ok(lift_and_splat(&render.features, depth, geo)?.grid.data)
}

fn header(p: &Platform, frame: usize, window: usize, spec: &GridSpec) -> Result<PacketHeader> {
    let (x, y) = spec.dims();
    PacketHeader::new(
        p.id,
        frame as u32,
        window as u16,
        x as u16,
        y as u16,
        FEATURE_CHANNELS as u16,
        WirePose::from(&p.pose),
    )
}

/// Records one message from every platform to every other platform.
fn broadcast(ledger: &mut BandwidthLedger, platforms: &[Platform], frame: usize, sizes: &[usize]) {
    for (s, &bytes) in platforms.iter().zip(sizes) {
        for r in platforms.iter().filter(|r| r.id != s.id) {
            ledger.record(frame as u32, s.id, r.id, bytes);
        }
    }
}

/// Keeps the most confident box among same-class boxes within
/// [`LATE_MERGE_RADIUS`].
pub fn late_merge(mut boxes: Vec<DetectionBox>) -> Vec<DetectionBox> {
    boxes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<DetectionBox> = Vec::new();
    for b in boxes {
        if !kept
            .iter()
            .any(|k| k.class == b.class && k.ground_distance(&b) <= LATE_MERGE_RADIUS)
        {
            kept.push(b);
        }
    }
    kept
}

fn move_box(b: &DetectionBox, from: &BevFrame, to: &BevFrame) -> DetectionBox {
    let (wx, wz) = from.bev_to_world(b.center[0], b.center[1]);
    let (x, y) = to.world_to_bev(wx, wz);
    DetectionBox {
        center: [x, y, b.center[2]],
        yaw: b.yaw + from.yaw - to.yaw,
        ..*b
    }
}

struct Exchange<'a> {
    platforms: &'a [Platform],
    ego: usize,
    cfg: &'a EpisodeConfig,
    net: &'a FusionWeightNet,
    codec: Option<&'a HlfdcCodec>,
}

impl Exchange<'_> {
    fn fuse(&self, collabs: Vec<Collaborator>, obs: &Observations) -> Result<Extraction> {
        let out = fuse_collaborators(obs.local[self.ego].view(), collabs, self.net)?;
        Ok(extract_instances(out.fused.view(), &self.cfg.grid, &self.cfg.extract_params()))
    }

    fn run(
        &self,
        strategy: CollabStrategy,
        t: usize,
        obs: &Observations,
        ledger: &mut BandwidthLedger,
    ) -> Result<(Vec<DetectionBox>, InstanceMap)> {
        let ps = self.platforms;
        let ego_frame = &obs.frames[self.ego];
        let ego_id = ps[self.ego].id;
        let spec = &self.cfg.grid;
        match strategy {
            CollabStrategy::None => {
                let ex = &obs.local_extractions[self.ego];
                Ok((ex.boxes.clone(), ex.instances.clone()))
            }
            CollabStrategy::Early => {
                let sizes: Vec<usize> = ps
                    .iter()
                    .map(|p| {
                        let (pw, ph) = (p.intrinsics.width as usize, p.intrinsics.height as usize);
                        HEADER_LEN + pw * ph * FEATURE_CHANNELS * 4 + pw * ph * 2
                    })
                    .collect();
                broadcast(ledger, ps, t, &sizes);
                let maps = ps
                    .par_iter()
                    .enumerate()
                    .map(|(i, p)| splat_into(p, &obs.renders[i], &obs.depths[i], ego_frame, self.cfg))
                    .collect::<Result<Vec<_>>>()?;
                // Pool in platform order so the result is scheduling-independent.
                let mut acc = Array3::<f64>::zeros(maps[0].dim());
                for m in &maps {
                    Zip::from(&mut acc).and(m).for_each(|a, &v| *a += v as f64);
                }
                let mut sum = acc.mapv(|a| a as f32);
                normalize_occupancy(sum.view_mut());
                let ex = extract_instances(sum.view(), spec, &self.cfg.extract_params());
                Ok((ex.boxes, ex.instances))
            }
            CollabStrategy::Late => {
                let sizes: Vec<usize> = obs
                    .local_extractions
                    .iter()
                    .map(|e| HEADER_LEN + BOX_WIRE_BYTES * e.boxes.len())
                    .collect();
                broadcast(ledger, ps, t, &sizes);
                let mut all = Vec::new();
                for (i, ex) in obs.local_extractions.iter().enumerate() {
                    all.extend(ex.boxes.iter().map(|b| move_box(b, &obs.frames[i], ego_frame)));
                }
                let kept: Vec<DetectionBox> = late_merge(all)
                    .into_iter()
                    .filter(|b| spec.cell_of(b.center[0], b.center[1]).is_some())
                    .collect();
                let numbered: Vec<(u32, DetectionBox)> =
                    kept.iter().enumerate().map(|(k, b)| (k as u32 + 1, *b)).collect();
                Ok((kept, rasterize_boxes(&numbered, spec)))
            }
            CollabStrategy::Full => {
                let mut collabs = vec![Collaborator {
                    id: ego_id,
                    features: obs.local[self.ego].clone(),
                }];
                let mut sizes = Vec::new();
                for (i, p) in ps.iter().enumerate() {
                    let msg = RawMapMessage::new(header(p, t, 1, spec)?, obs.local[i].clone())?;
                    let bytes = msg.to_bytes();
                    sizes.push(bytes.len());
                    if i != self.ego {
                        let received = RawMapMessage::from_bytes(&bytes)?;
                        collabs.push(Collaborator {
                            id: p.id,
                            features: decode_raw_map(&received, ego_frame, spec)?,
                        });
                    }
                }
                broadcast(ledger, ps, t, &sizes);
                let ex = self.fuse(collabs, obs)?;
                Ok((ex.boxes, ex.instances))
            }
            CollabStrategy::Hlfdc => {
                let codec = self
                    .codec
                    .ok_or_else(|| Error::Config("HLFDC strategy without a codec".into()))?;
                let mut collabs = vec![Collaborator {
                    id: ego_id,
                    features: obs.local[self.ego].clone(),
                }];
                let mut sizes = Vec::new();
                // Senders encode one after another; each encode is parallel inside.
                for (i, p) in ps.iter().enumerate() {
                    let pkt = codec.encode(obs.local[i].view(), header(p, t, codec.window, spec)?)?;
                    let bytes = pkt.to_bytes();
                    sizes.push(bytes.len());
                    if i != self.ego {
                        let received = FrequencyPacket::from_bytes(&bytes)?;
                        collabs.push(Collaborator {
                            id: p.id,
                            features: decode_packet(&received, ego_frame, spec, self.cfg.codec.kernel)?,
                        });
                    }
                }
                broadcast(ledger, ps, t, &sizes);
                let ex = self.fuse(collabs, obs)?;
                Ok((ex.boxes, ex.instances))
            }
        }
    }
}

/// Runs several strategies over the same observations. Platform 0 is the
/// ego; only it fuses, but every directed link is charged.
pub fn run_episodes(
    scene: &Scene,
    platforms: &[Platform],
    strategies: &[CollabStrategy],
    cfg: &EpisodeConfig,
) -> Result<Vec<EpisodeResult>> {
    if platforms.is_empty() {
        return Err(Error::Config("an episode needs at least one platform".into()));
    }
    for &s in strategies {
        cfg.check(s)?;
    }
    let net = FusionWeightNet::seeded(FEATURE_CHANNELS, cfg.fusion_hidden, cfg.fusion_seed);
    let codec = if strategies.contains(&CollabStrategy::Hlfdc) {
        Some(cfg.codec.build()?)
    } else {
        None
    };
    let ego = 0;
    let exchange = Exchange {
        platforms,
        ego,
        cfg,
        net: &net,
        codec: codec.as_ref(),
    };
    let (x, y) = cfg.grid.dims();
    let full_payload = 4 * x * y * FEATURE_CHANNELS;

    struct Acc {
        frames: Vec<FrameOutput>,
        ledger: BandwidthLedger,
        tracker: Tracker,
        tracks: Vec<InstanceMap>,
    }
    let mut accs: Vec<Acc> = strategies
        .iter()
        .map(|s| Acc {
            frames: Vec::new(),
            ledger: BandwidthLedger::new(s.name(), full_payload),
            tracker: Tracker::new(TRACK_GATE),
            tracks: Vec::new(),
        })
        .collect();
    let mut gt_tracks = Vec::new();

    for t in 0..scene.frames.len() {
        let obs = observe(platforms, scene, t, cfg)?;
        let ego_frame = obs.frames[ego];
        let gt_boxes: Vec<(u32, DetectionBox)> = scene.frames[t]
            .iter()
            .map(|o| {
                let mut b = o.to_box();
                let (bx, by) = ego_frame.world_to_bev(o.center[0], o.center[1]);
                b.center = [bx, by, b.center[2]];
                b.yaw -= ego_frame.yaw;
                (o.id, b)
            })
            .filter(|(_, b)| cfg.grid.cell_of(b.center[0], b.center[1]).is_some())
            .collect();
        gt_tracks.push(rasterize_boxes(&gt_boxes, &cfg.grid));
        for (acc, &s) in accs.iter_mut().zip(strategies) {
            let (boxes, instances) = exchange.run(s, t, &obs, &mut acc.ledger)?;
            acc.tracks.push(acc.tracker.assign(&boxes, &instances));
            acc.frames.push(FrameOutput {
                frame: t,
                boxes,
                instances,
                gt_boxes: gt_boxes.clone(),
                platform_boxes: obs.local_extractions.iter().map(|e| e.boxes.clone()).collect(),
                visibility: obs.renders.iter().map(|r| r.visibility.clone()).collect(),
            });
        }
    }

    accs.into_iter()
        .zip(strategies)
        .map(|(acc, &s)| {
            let report = evaluate(s.name(), &acc.frames, &acc.tracks, &gt_tracks, &cfg.grid, &cfg.ranges, &acc.ledger)?;
            Ok(EpisodeResult {
                strategy: s,
                frames: acc.frames,
                tracks: acc.tracks,
                gt_tracks: gt_tracks.clone(),
                ledger: acc.ledger,
                report,
            })
        })
        .collect()
}

pub fn run_episode(
    scene: &Scene,
    platforms: &[Platform],
    strategy: CollabStrategy,
    cfg: &EpisodeConfig,
) -> Result<EpisodeResult> {
    Ok(run_episodes(scene, platforms, &[strategy], cfg)?.remove(0))
}
