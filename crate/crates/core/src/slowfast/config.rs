use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual backbone depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Depth {
    R18,
    R50,
    R101,
}

impl Depth {
    /// Residual blocks in res2..res5.
    pub fn stage_blocks(self) -> [usize; 4] {
        match self {
            Depth::R18 => [2, 2, 2, 2],
            Depth::R50 => [3, 4, 6, 3],
            Depth::R101 => [3, 4, 23, 3],
        }
    }

    pub fn bottleneck(self) -> bool {
        !matches!(self, Depth::R18)
    }
}

impl TryFrom<u32> for Depth {
    type Error = String;

    fn try_from(v: u32) -> Result<Self, String> {
        match v {
            18 => Ok(Depth::R18),
            50 => Ok(Depth::R50),
            101 => Ok(Depth::R101),
            other => Err(format!("backbone depth must be 18, 50 or 101 (got {other})")),
        }
    }
}

impl From<Depth> for u32 {
    fn from(d: Depth) -> u32 {
        match d {
            Depth::R18 => 18,
            Depth::R50 => 50,
            Depth::R101 => 101,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathway {
    Slow,
    Fast,
}

impl std::fmt::Display for Pathway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pathway::Slow => "slow",
            Pathway::Fast => "fast",
        })
    }
}

pub const STAGE_NAMES: [&str; 5] = ["stem", "res2", "res3", "res4", "res5"];

/// Temporal kernel sizes of the first convolution in each residual stage.
pub(crate) const SLOW_TEMPORAL_KERNELS: [usize; 4] = [1, 1, 3, 3];
pub(crate) const FAST_TEMPORAL_KERNELS: [usize; 4] = [3, 3, 3, 3];
pub(crate) const LATERAL_TEMPORAL_KERNEL: usize = 5;
/// Lateral output channels as a multiple of the fast channels feeding it.
pub(crate) const FUSION_RATIO: usize = 2;

/// Architecture of the dual-pathway network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathwayConfig {
    /// Fast/slow frame-rate ratio.
    pub alpha: usize,
    /// Slow/fast channel ratio: fast width = slow width / `beta_inv`.
    pub beta_inv: usize,
    pub slow_frames: usize,
    pub backbone_depth: Depth,
    /// Output channels of the slow stem.
    pub base_width: usize,
    /// Stages followed by a non-local block, e.g. `"slow.res4"`.
    pub nonlocal_stages: Vec<String>,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub in_channels: usize,
}

impl Default for PathwayConfig {
    fn default() -> Self {
        Self {
            alpha: 4,
            beta_inv: 8,
            slow_frames: 2,
            backbone_depth: Depth::R101,
            base_width: 64,
            nonlocal_stages: vec!["slow.res4".into()],
            num_classes: 2,
            dropout_rate: 0.5,
            in_channels: 3,
        }
    }
}

impl PathwayConfig {
    pub fn fast_frames(&self) -> usize {
        self.alpha * self.slow_frames
    }

    /// Slow-pathway output width of the stem and res2..res5.
    pub fn slow_widths(&self) -> [usize; 5] {
        let b = self.base_width;
        let expand = if self.backbone_depth.bottleneck() { 4 } else { 1 };
        [b, b * expand, 2 * b * expand, 4 * b * expand, 8 * b * expand]
    }

    /// Bottleneck inner widths of res2..res5 (equal to output widths for basic blocks).
    pub fn slow_inner_widths(&self) -> [usize; 4] {
        let b = self.base_width;
        [b, 2 * b, 4 * b, 8 * b]
    }

    pub fn fast_widths(&self) -> [usize; 5] {
        self.slow_widths().map(|w| w / self.beta_inv.max(1))
    }

    pub fn fast_inner_widths(&self) -> [usize; 4] {
        self.slow_inner_widths().map(|w| w / self.beta_inv.max(1))
    }

    pub fn has_nonlocal(&self, pathway: Pathway, stage: &str) -> bool {
        let key = format!("{pathway}.{stage}");
        self.nonlocal_stages.iter().any(|s| *s == key)
    }

    /// Every violated invariant, in a stable order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.alpha == 0 {
            out.push("alpha must be >= 1".into());
        }
        if self.beta_inv == 0 {
            out.push("beta_inv must be >= 1".into());
        }
        if self.slow_frames == 0 {
            out.push("slow_frames must be >= 1".into());
        }
        if self.base_width == 0 {
            out.push("base_width must be >= 1".into());
        }
        if self.num_classes < 2 {
            out.push("num_classes must be >= 2".into());
        }
        if self.in_channels == 0 {
            out.push("in_channels must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            out.push(format!("dropout_rate must lie in [0, 1) (got {})", self.dropout_rate));
        }
        if self.beta_inv > 0 && self.base_width > 0 {
            let inner = [0]
                .into_iter()
                .chain(self.slow_inner_widths())
                .collect::<Vec<_>>();
            for (i, (name, w)) in STAGE_NAMES.iter().zip(self.slow_widths()).enumerate() {
                let inner_w = if i == 0 { w } else { inner[i] };
                if w % self.beta_inv != 0 || inner_w % self.beta_inv != 0 {
                    out.push(format!(
                        "stage {name}: slow width {w} not divisible by beta_inv {}",
                        self.beta_inv
                    ));
                    break;
                }
            }
        }
        for s in &self.nonlocal_stages {
            let ok = s.split_once('.').is_some_and(|(p, st)| {
                (p == "slow" || p == "fast") && STAGE_NAMES[1..].contains(&st)
            });
            if !ok {
                out.push(format!("unknown non-local stage {s:?} (expected e.g. \"slow.res4\")"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}
