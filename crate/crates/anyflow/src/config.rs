//! Model and training hyperparameters.

use serde::{Deserialize, Serialize};

/// How correlation values are gathered around each pixel's current match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LookupMode {
    /// Square integer-offset grid of side `2*r0+1` at every pyramid level.
    Fixed,
    /// Same grid, but spacing scales with a learned per-pixel radius `r/r0`.
    Dynamic,
    /// Dynamic spacing, and each sample is replaced by a learned summary of a
    /// 3x3 auxiliary patch at half the primary spacing.
    Region,
}

impl LookupMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fixed" => Some(LookupMode::Fixed),
            "dynamic" => Some(LookupMode::Dynamic),
            "region" => Some(LookupMode::Region),
            _ => None,
        }
    }
}

impl std::fmt::Display for LookupMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LookupMode::Fixed => "fixed",
            LookupMode::Dynamic => "dynamic",
            LookupMode::Region => "region",
        };
        f.write_str(s)
    }
}

/// Architecture hyperparameters. Every channel width is explicit so the same
/// code runs both the desk-scale model and a tiny configuration cheap enough
/// for finite-difference verification of the whole pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature channels tapped at 1/2, 1/4 and 1/8 resolution. The last entry
    /// is the matching-feature dimension of the correlation volume.
    pub feat_channels: [usize; 3],
    /// GRU hidden state channels (also the upsampler's latent width).
    pub hidden: usize,
    /// Context feature channels.
    pub context: usize,
    /// Motion encoder widths: correlation reduce (1x1), correlation mix (3x3),
    /// flow encode stage 1 and 2 (3x3), and the combined output. The combined
    /// output includes 2 raw flow channels, so the mixing conv emits
    /// `motion_out - 2`.
    pub motion_corr1: usize,
    pub motion_corr2: usize,
    pub motion_flow1: usize,
    pub motion_flow2: usize,
    pub motion_out: usize,
    /// Channels emitted by the 1x1 fusion convs before space-to-depth; the
    /// half-resolution branch is repacked by 4, the quarter branch by 2.
    pub fuse_half: usize,
    pub fuse_quarter: usize,
    /// Channels of the fused multi-scale feature after the final 1x1 mix.
    pub fuse_out: usize,
    /// Hidden width of the flow delta head.
    pub flow_mid: usize,
    /// Hidden width of the radius delta head (final layer zero-initialized).
    pub rad_mid: usize,
    /// Hidden width of the coordinate network that decodes mask weights.
    pub upsampler_width: usize,
    /// Hidden width of the region summary network.
    pub region_width: usize,
    /// Correlation pyramid depth.
    pub levels: usize,
    /// Base lookup radius in correlation cells; the grid has `(2*r0+1)^2`
    /// points per level.
    pub r0: usize,
    /// Clamp range for the learned per-pixel radius.
    pub r_min: f64,
    pub r_max: f64,
    /// Each decoded query emits an n x n block of output pixels.
    pub patch: usize,
    /// Frequency count of the positional encoding (4 * l_pe dims).
    pub l_pe: usize,
    pub mode: LookupMode,
    /// Default GRU iteration count.
    pub iters: usize,
}

impl ModelConfig {
    /// Desk-scale model: trains on a laptop CPU in minutes.
    pub fn desk() -> Self {
        ModelConfig {
            feat_channels: [16, 32, 64],
            hidden: 64,
            context: 64,
            motion_corr1: 64,
            motion_corr2: 48,
            motion_flow1: 32,
            motion_flow2: 16,
            motion_out: 64,
            fuse_half: 4,
            fuse_quarter: 16,
            fuse_out: 64,
            flow_mid: 64,
            rad_mid: 32,
            upsampler_width: 128,
            region_width: 32,
            levels: 4,
            r0: 4,
            r_min: 1.0,
            r_max: 16.0,
            patch: 4,
            l_pe: 6,
            mode: LookupMode::Region,
            iters: 12,
        }
    }

    /// Tiny configuration for end-to-end finite-difference checks. The lookup
    /// geometry (levels, r0) is kept identical to the desk model so the
    /// correlation interface is exercised at full width.
    pub fn tiny() -> Self {
        ModelConfig {
            feat_channels: [8, 12, 16],
            hidden: 16,
            context: 16,
            motion_corr1: 16,
            motion_corr2: 12,
            motion_flow1: 8,
            motion_flow2: 8,
            motion_out: 16,
            fuse_half: 1,
            fuse_quarter: 4,
            fuse_out: 16,
            flow_mid: 16,
            rad_mid: 8,
            upsampler_width: 64,
            region_width: 16,
            levels: 4,
            r0: 4,
            r_min: 1.0,
            r_max: 16.0,
            patch: 4,
            l_pe: 6,
            mode: LookupMode::Region,
            iters: 2,
        }
    }

    /// Correlation feature channels handed to the motion encoder:
    /// one per lookup point, `levels * (2*r0+1)^2` in total.
    pub fn corr_channels(&self) -> usize {
        let side = 2 * self.r0 + 1;
        self.levels * side * side
    }

    /// Input width of the mask-decoding coordinate network:
    /// latent + raw offset (2) + positional encoding (4 * l_pe).
    pub fn upsampler_input(&self) -> usize {
        self.hidden + 2 + 4 * self.l_pe
    }

    /// GRU input channels: context, motion features, fused warp features.
    pub fn gru_input(&self) -> usize {
        self.context + self.motion_out + self.fuse_out
    }
}

/// Toy-training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    /// GRU iterations per forward pass during training.
    pub iters: usize,
    pub lr_peak: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Exponential weighting of per-iteration losses; must lie in (0, 1].
    pub gamma: f64,
    /// Probability of downsampling the input pair (target stays full size).
    pub p_downsample: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
    /// Maximum synthetic displacement magnitude in pixels.
    pub max_disp: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            batch: 4,
            height: 64,
            width: 96,
            // 4 refinement iterations keep a full 3000-step run comfortably
            // inside a laptop-CPU time budget; inference uses more.
            iters: 4,
            lr_peak: 4e-4,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            gamma: 0.8,
            p_downsample: 0.5,
            scale_lo: 0.5,
            scale_hi: 1.0,
            max_disp: 8.0,
            seed: 7,
        }
    }
}
