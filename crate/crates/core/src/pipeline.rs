//! Scene-level batch pipelines: metrics for every scene, then Tail Index
//! ranking. Output is ordered by scene id regardless of completion order.

use serde::{Deserialize, Serialize};

use crate::batch;
use crate::error::Result;
use crate::interaction::INTERACTIVE_DIM;
use crate::interaction::{interaction_metrics, InteractionFlags, InteractiveMetrics, RssParams};
use crate::intrinsic::{intrinsic_metrics, IntrinsicFlags, IntrinsicMetrics, INTRINSIC_DIM};
use crate::memory::partition_categories;
use crate::perceiver::{normalize_features, DatasetStats, ForwardMode, PerceiverParams};
use crate::trajectory::Scene;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneFlags {
    pub intrinsic: IntrinsicFlags,
    pub interaction: InteractionFlags,
}

/// All fourteen metrics of one scene's target agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene_id: String,
    pub target_id: String,
    pub intrinsic: IntrinsicMetrics,
    pub interactive: InteractiveMetrics,
    pub flags: SceneFlags,
}

pub fn scene_metrics(scene: &Scene, params: &RssParams) -> SceneMetrics {
    let intrinsic = intrinsic_metrics(scene.target());
    let interaction = interaction_metrics(scene, params);
    SceneMetrics {
        scene_id: scene.scene_id().to_string(),
        target_id: scene.target_id().to_string(),
        intrinsic: intrinsic.metrics,
        interactive: interaction.metrics,
        flags: SceneFlags {
            intrinsic: intrinsic.flags,
            interaction: interaction.flags,
        },
    }
}

/// Metrics of every scene, sorted by scene id.
pub fn metrics_batch(scenes: &[Scene], params: &RssParams) -> Result<Vec<SceneMetrics>> {
    params.validate()?;
    let mut out = batch::map(scenes, |s| scene_metrics(s, params));
    out.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub scene_id: String,
    #[serde(rename = "TI")]
    pub ti: f64,
    pub f_i: Vec<f64>,
    pub f_r: Vec<f64>,
    pub alpha_i: f64,
    pub alpha_r: f64,
    /// Tail category from TI percentiles, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rows: Vec<RankRow>,
    pub stats: DatasetStats,
    /// Category boundaries when categories were requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RankOptions {
    /// Sample-mode base seed; scene `i` (in scene-id order) uses `seed + i`.
    /// Mean mode when `None`.
    pub seed: Option<u64>,
    /// Number of tail categories to assign.
    pub categories: Option<usize>,
}

/// Tail Index of every scene, sorted by descending TI with ties broken by
/// scene id. Normalization statistics are fitted on the batch itself unless
/// given; a single-scene batch falls back to the identity.
pub fn rank_scenes(
    metrics: &[SceneMetrics],
    params: &PerceiverParams,
    stats: Option<&DatasetStats>,
    options: RankOptions,
) -> Result<RankReport> {
    params.validate()?;
    let mut ordered: Vec<&SceneMetrics> = metrics.iter().collect();
    ordered.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    let stats = match stats {
        Some(s) => s.clone(),
        None if ordered.len() >= 2 => {
            let pairs: Vec<(IntrinsicMetrics, InteractiveMetrics)> = ordered
                .iter()
                .map(|m| (m.intrinsic, m.interactive))
                .collect();
            DatasetStats::fit_metrics(&pairs)?
        }
        None => DatasetStats::identity(INTRINSIC_DIM + INTERACTIVE_DIM),
    };
    let indexed: Vec<(usize, &SceneMetrics)> = ordered.into_iter().enumerate().collect();
    let mut rows = batch::try_map(&indexed, |&(i, m)| {
        let (f_i, f_r) = normalize_features(&m.intrinsic, &m.interactive, &stats)?;
        let mode = match options.seed {
            Some(seed) => ForwardMode::Sample {
                seed: seed.wrapping_add(i as u64),
            },
            None => ForwardMode::Mean,
        };
        let r = params.evaluate(&f_i, &f_r, mode)?;
        Ok(RankRow {
            rank: 0,
            scene_id: m.scene_id.clone(),
            ti: r.ti,
            f_i,
            f_r,
            alpha_i: r.alpha_i,
            alpha_r: r.alpha_r,
            category: None,
        })
    })?;
    let boundaries = match options.categories {
        Some(c) => {
            let tis: Vec<f64> = rows.iter().map(|r| r.ti).collect();
            let partition = partition_categories(&tis, c)?;
            for (row, cat) in rows.iter_mut().zip(partition.assignments) {
                row.category = Some(cat);
            }
            Some(partition.boundaries)
        }
        None => None,
    };
    rows.sort_by(|a, b| {
        b.ti.total_cmp(&a.ti)
            .then_with(|| a.scene_id.cmp(&b.scene_id))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    Ok(RankReport {
        rows,
        stats,
        boundaries,
    })
}
