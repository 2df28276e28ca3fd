use serde::Serialize;

use crate::model::config::ModelConfig;
use crate::model::forward::stage_plan;

/// Multiply-accumulates of one stack.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageFlops {
    pub name: String,
    pub tokens: usize,
    pub blocks: usize,
    pub macs: u64,
}

/// Dense-linear multiply-accumulate counts of one forward pass.
///
/// Attention score and value products, softmax, normalization and bias adds
/// are not counted.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopsBreakdown {
    pub embeddings: u64,
    pub stages: Vec<StageFlops>,
    pub head: u64,
    pub total: u64,
    pub total_gflops: f64,
}

impl FlopsBreakdown {
    fn finish(embeddings: u64, stages: Vec<StageFlops>, head: u64) -> Self {
        let total = embeddings + stages.iter().map(|s| s.macs).sum::<u64>() + head;
        Self { embeddings, stages, head, total, total_gflops: total as f64 / 1e9 }
    }

    pub fn stage(&self, name: &str) -> Option<&StageFlops> {
        self.stages.iter().find(|s| s.name == name)
    }
}

fn block_macs_per_token(cfg: &ModelConfig) -> u64 {
    let d = cfg.d_emb as u64;
    // q, k, v, o projections plus the two MLP layers
    (4 + 2 * cfg.mlp_ratio as u64) * d * d
}

fn image_embed_macs(cfg: &ModelConfig) -> u64 {
    (cfg.n_image_tokens() * cfg.image_patch_dim() * cfg.d_emb) as u64
}

pub fn count_flops(cfg: &ModelConfig) -> FlopsBreakdown {
    let per_token = block_macs_per_token(cfg);
    let stages: Vec<StageFlops> = stage_plan(cfg)
        .into_iter()
        .map(|s| StageFlops {
            macs: (s.tokens * s.blocks) as u64 * per_token,
            name: s.name,
            tokens: s.tokens,
            blocks: s.blocks,
        })
        .collect();
    let images = 1 + cfg.uses_prev_image() as u64;
    let mut embeddings = images * image_embed_macs(cfg);
    if cfg.uses_imu() {
        embeddings += (cfg.n_imu_tokens() * cfg.imu_patch_dim() * cfg.d_emb) as u64;
    }
    let d = cfg.d_emb as u64;
    let head = d * d + d * cfg.out_len as u64;
    FlopsBreakdown::finish(embeddings, stages, head)
}

/// A standalone image encoder: one embedding followed by `blocks` blocks.
pub fn image_encoder_flops(cfg: &ModelConfig, blocks: usize) -> FlopsBreakdown {
    let tokens = cfg.n_image_tokens();
    let stage = StageFlops {
        name: "image_encoder".into(),
        tokens,
        blocks,
        macs: (tokens * blocks) as u64 * block_macs_per_token(cfg),
    };
    FlopsBreakdown::finish(image_embed_macs(cfg), vec![stage], 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{Ablation, Fusion, PatchMode};

    #[test]
    fn totals_are_sums() {
        for fusion in [Fusion::Sandwich, Fusion::Early, Fusion::Late] {
            let f = count_flops(&ModelConfig { fusion, ..ModelConfig::default() });
            assert_eq!(f.total, f.embeddings + f.head + f.stages.iter().map(|s| s.macs).sum::<u64>());
        }
    }

    #[test]
    fn width_and_height_match() {
        let w = image_encoder_flops(&ModelConfig::default(), 6);
        let h = image_encoder_flops(&ModelConfig { image_patch_mode: PatchMode::Height, ..ModelConfig::default() }, 6);
        assert_eq!(w, h);
        assert_eq!(w.total, 14 * 3584 * 768 + 6 * 14 * 12 * 768 * 768);
    }

    #[test]
    fn ablations_drop_their_embedding() {
        let full = count_flops(&ModelConfig::default());
        let no_imu = count_flops(&ModelConfig { ablation: Ablation::NoImu, ..ModelConfig::default() });
        assert_eq!(no_imu.stage("stage1_fused").unwrap().tokens, 14);
        assert_eq!(full.embeddings - no_imu.embeddings, 10 * 190 * 768);
    }
}
