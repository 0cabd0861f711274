//! Siamese training of the encoder with contrastive loss.
//!
//! Pairs of views are sampled by world-coordinate proximity: positives from
//! the nearest views of an anchor, negatives from configurable rank windows
//! further out. Curriculum training runs an easy, a medium and a hard stage
//! in equal thirds of the epoch budget, each with progressively harder rank
//! windows. Plain SGD, deterministic given the seed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{FloorDataset, Pose};
use crate::encoder::{embedding_distance, EncoderDims, EncoderParams, GradientSet};
use crate::error::{Error, Result};
use crate::graph::{build_graph, feature_matrix, normalize_adjacency, ViewId};

/// One sampled training pair: two distinct views and a similarity label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingPair {
    pub graph_a: ViewId,
    pub graph_b: ViewId,
    /// `true` = similar pair, `false` = dissimilar.
    pub label: bool,
}

/// Difficulty stage of the curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurriculumStage {
    /// Positive: the single nearest view. Negative: any view beyond rank 100.
    Easy,
    /// Positive: the 5 nearest views. Negative: ranks 10 to 100.
    Medium,
    /// Positive: the 5 nearest excluding the 2 closest. Negative: ranks 100
    /// to 1000.
    Hard,
}

impl CurriculumStage {
    pub fn name(&self) -> &'static str {
        match self {
            CurriculumStage::Easy => "easy",
            CurriculumStage::Medium => "medium",
            CurriculumStage::Hard => "hard",
        }
    }

    /// Half-open rank window of positive partners, 0-based over the
    /// distance-sorted neighbor list.
    pub fn positive_window(&self) -> (usize, usize) {
        match self {
            CurriculumStage::Easy => (0, 1),
            CurriculumStage::Medium => (0, 5),
            CurriculumStage::Hard => (2, 5),
        }
    }

    /// Half-open rank window of negative partners.
    pub fn negative_window(&self) -> (usize, usize) {
        match self {
            CurriculumStage::Easy => (100, usize::MAX),
            CurriculumStage::Medium => (9, 100),
            CurriculumStage::Hard => (99, 1000),
        }
    }
}

/// Per-view neighbor lists sorted ascending by world (x, y) distance, with
/// ties broken by view id.
#[derive(Debug, Clone)]
pub struct Rankings {
    ids: Vec<ViewId>,
    // neighbors[i] holds indices into `ids`, nearest first.
    neighbors: Vec<Vec<usize>>,
    index_of: BTreeMap<ViewId, usize>,
}

impl Rankings {
    pub fn view_ids(&self) -> &[ViewId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Neighbor ids of a view, nearest first.
    pub fn neighbors_of(&self, id: ViewId) -> Option<Vec<ViewId>> {
        let idx = *self.index_of.get(&id)?;
        Some(self.neighbors[idx].iter().map(|&j| self.ids[j]).collect())
    }

    /// 0-based rank of `partner` in the neighbor list of `anchor`.
    pub fn rank_of(&self, anchor: ViewId, partner: ViewId) -> Option<usize> {
        let a = *self.index_of.get(&anchor)?;
        let p = *self.index_of.get(&partner)?;
        self.neighbors[a].iter().position(|&j| j == p)
    }
}

/// Sorts, for every view, all other views by ascending Euclidean (x, y)
/// distance; ties break by view id. Errors with fewer than two views.
pub fn rank_views_by_distance(poses: &[(ViewId, Pose)]) -> Result<Rankings> {
    if poses.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "ranking needs at least 2 views, got {}",
            poses.len()
        )));
    }
    let mut entries: Vec<(ViewId, Pose)> = poses.to_vec();
    entries.sort_by_key(|(id, _)| *id);
    let ids: Vec<ViewId> = entries.iter().map(|(id, _)| *id).collect();
    let index_of: BTreeMap<ViewId, usize> =
        ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    if index_of.len() != ids.len() {
        return Err(Error::Schema("duplicate view ids in pose list".into()));
    }
    let n = ids.len();
    let mut neighbors = Vec::with_capacity(n);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            let da = entries[i].1.distance_xy(&entries[a].1);
            let db = entries[i].1.distance_xy(&entries[b].1);
            da.partial_cmp(&db)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| ids[a].cmp(&ids[b]))
        });
        neighbors.push(order);
    }
    Ok(Rankings { ids, neighbors, index_of })
}

fn clamp_window(window: (usize, usize), n_others: usize) -> (usize, usize) {
    let lo = window.0.min(n_others.saturating_sub(1));
    let hi = window.1.min(n_others);
    (lo, hi.max(lo + 1).min(n_others).max(lo + 1))
}

/// Samples `count` pairs from the stage's rank windows, half positive and
/// half negative (positives first on odd counts). Windows truncate to the
/// dataset size. Deterministic per seed.
pub fn sample_pairs(
    stage: CurriculumStage,
    rankings: &Rankings,
    count: usize,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    if rankings.len() < 2 {
        return Err(Error::InsufficientData("pair sampling needs at least 2 views".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rankings.len();
    let n_others = n - 1;
    let mut pairs = Vec::with_capacity(count);
    for k in 0..count {
        let label = k % 2 == 0;
        let window = if label { stage.positive_window() } else { stage.negative_window() };
        let (lo, hi) = clamp_window(window, n_others);
        let anchor_idx = rng.gen_range(0..n);
        let rank = if hi - lo == 1 { lo } else { rng.gen_range(lo..hi) };
        let partner_idx = rankings.neighbors[anchor_idx][rank];
        pairs.push(TrainingPair {
            graph_a: rankings.ids[anchor_idx],
            graph_b: rankings.ids[partner_idx],
            label,
        });
    }
    Ok(pairs)
}

/// Contrastive loss and its derivative with respect to the distance:
/// `label * d^2 + (1 - label) * max(0, margin - d)^2`.
pub fn contrastive_loss(distance: f64, similar: bool, margin: f64) -> (f64, f64) {
    debug_assert!(distance >= 0.0 && margin > 0.0);
    if similar {
        (distance * distance, 2.0 * distance)
    } else {
        let hinge = (margin - distance).max(0.0);
        (hinge * hinge, -2.0 * hinge)
    }
}

/// Training configuration. Defaults: margin 1.0, SGD rate 1e-3, batch 32,
/// patience 25, curriculum enabled with half the epoch budget.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub curriculum_enabled: bool,
    /// Fraction of `max_epochs` actually used when the curriculum is on;
    /// curriculum training converges faster.
    pub curriculum_epoch_factor: f64,
    /// Nodes per graph when building training graphs.
    pub node_count: usize,
    pub dims: EncoderDims,
    /// Pair batches per epoch.
    pub batches_per_epoch: usize,
    /// Size of the held-out validation pair set.
    pub val_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            learning_rate: 1e-3,
            max_epochs: 1000,
            patience: 25,
            batch_size: 32,
            seed: 42,
            curriculum_enabled: true,
            curriculum_epoch_factor: 0.5,
            node_count: 256,
            dims: EncoderDims::default(),
            batches_per_epoch: 4,
            val_pairs: 64,
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: &'static str,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best: bool,
}

/// Per-epoch training log, written as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "epoch,stage,train_loss,val_loss,best_flag")?;
        for row in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                row.epoch,
                row.stage,
                row.train_loss,
                row.val_loss,
                if row.best { 1 } else { 0 }
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Result of a training run: the best-validation parameters and the log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub log: TrainingLog,
}

struct GraphCache {
    ids: Vec<ViewId>,
    x: Vec<nalgebra::DMatrix<f64>>,
    a_hat: Vec<crate::graph::NormalizedAdjacency>,
    index_of: BTreeMap<ViewId, usize>,
}

fn build_graph_cache(dataset: &FloorDataset, node_count: usize) -> Result<GraphCache> {
    let mut ids = Vec::new();
    let mut x = Vec::new();
    let mut a_hat = Vec::new();
    for view in &dataset.views {
        if view.keypoints.is_empty() {
            continue;
        }
        let graph = build_graph(&view.keypoints, node_count, view.view_id)?;
        ids.push(view.view_id);
        x.push(feature_matrix(&graph));
        a_hat.push(normalize_adjacency(&graph));
    }
    if ids.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "training needs at least 2 non-empty views, got {}",
            ids.len()
        )));
    }
    let index_of = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    Ok(GraphCache { ids, x, a_hat, index_of })
}

/// Validation pairs labeled by footprint overlap: a pair is similar when the
/// camera centers are closer than half the smaller footprint side.
fn sample_validation_pairs(
    dataset: &FloorDataset,
    rankings: &Rankings,
    count: usize,
    seed: u64,
) -> Vec<TrainingPair> {
    let poses: BTreeMap<ViewId, Pose> =
        dataset.views.iter().map(|v| (v.view_id, v.pose)).collect();
    let threshold =
        0.5 * dataset.camera.footprint_width.min(dataset.camera.footprint_height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rankings.len();
    let mut pairs = Vec::with_capacity(count);
    for k in 0..count {
        let want_similar = k % 2 == 0;
        let anchor_idx = rng.gen_range(0..n);
        let anchor = rankings.ids[anchor_idx];
        let order = &rankings.neighbors[anchor_idx];
        let rank = if want_similar {
            rng.gen_range(0..3.min(order.len()))
        } else {
            let lo = 100.min(order.len() - 1);
            if order.len() - lo <= 1 { lo } else { rng.gen_range(lo..order.len()) }
        };
        let partner = rankings.ids[order[rank]];
        let dist = poses[&anchor].distance_xy(&poses[&partner]);
        pairs.push(TrainingPair { graph_a: anchor, graph_b: partner, label: dist < threshold });
    }
    pairs
}

/// Loss of one pair plus the parameter gradients when `grads` is given.
fn pair_loss(
    params: &EncoderParams,
    cache: &GraphCache,
    pair: &TrainingPair,
    margin: f64,
    mut grads: Option<&mut GradientSet>,
) -> Result<f64> {
    let ia = *cache
        .index_of
        .get(&pair.graph_a)
        .ok_or_else(|| Error::InsufficientData(format!("view {} not in cache", pair.graph_a)))?;
    let ib = *cache
        .index_of
        .get(&pair.graph_b)
        .ok_or_else(|| Error::InsufficientData(format!("view {} not in cache", pair.graph_b)))?;
    let fwd_a = params.forward(&cache.x[ia], &cache.a_hat[ia])?;
    let fwd_b = params.forward(&cache.x[ib], &cache.a_hat[ib])?;
    let e_a = &fwd_a.embedding;
    let e_b = &fwd_b.embedding;
    let distance = embedding_distance(e_a, e_b)?;
    let (loss, d_loss_d_dist) = contrastive_loss(distance, pair.label, margin);
    if let Some(grads) = grads.take() {
        // d distance / d e_a = (e_a - e_b) / distance; zero at coincident
        // embeddings where the direction is undefined.
        if distance > 1e-12 {
            let diff = e_a.values() - e_b.values();
            let upstream_a: DVector<f64> = (d_loss_d_dist / distance) * &diff;
            let upstream_b: DVector<f64> = -&upstream_a;
            let g_a = params.backward(&cache.a_hat[ia], &fwd_a, &upstream_a)?;
            let g_b = params.backward(&cache.a_hat[ib], &fwd_b, &upstream_b)?;
            grads.add_assign(&g_a);
            grads.add_assign(&g_b);
        }
    }
    Ok(loss)
}

fn stage_for_epoch(epoch: usize, total: usize, curriculum: bool) -> CurriculumStage {
    if !curriculum {
        return CurriculumStage::Medium;
    }
    let third = (total as f64 / 3.0).ceil() as usize;
    if epoch < third {
        CurriculumStage::Easy
    } else if epoch < 2 * third {
        CurriculumStage::Medium
    } else {
        CurriculumStage::Hard
    }
}

/// Trains the encoder on a dataset. Runs epochs of SGD pair batches, with
/// the curriculum stages in equal thirds of the (reduced) epoch budget when
/// enabled; validation loss on a held-out pair set drives early stopping
/// (within a stage it advances to the next stage); returns the parameters of
/// the best-validation epoch together with the per-epoch log.
pub fn fit(dataset: &FloorDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let cache = build_graph_cache(dataset, config.node_count)?;
    let poses: Vec<(ViewId, Pose)> = dataset
        .views
        .iter()
        .filter(|v| !v.keypoints.is_empty())
        .map(|v| (v.view_id, v.pose))
        .collect();
    let rankings = rank_views_by_distance(&poses)?;
    let val_set =
        sample_validation_pairs(dataset, &rankings, config.val_pairs.max(2), config.seed ^ 0x5EED);

    let total_epochs = if config.curriculum_enabled {
        ((config.max_epochs as f64 * config.curriculum_epoch_factor).round() as usize).max(1)
    } else {
        config.max_epochs
    };

    let mut params = EncoderParams::init(config.seed, config.dims);
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut log = TrainingLog::default();
    let mut since_improve = 0usize;
    let mut current_stage = stage_for_epoch(0, total_epochs, config.curriculum_enabled);

    let mut epoch = 0;
    while epoch < total_epochs {
        let stage = stage_for_epoch(epoch, total_epochs, config.curriculum_enabled);
        if stage != current_stage {
            current_stage = stage;
            since_improve = 0;
        }
        let pair_count = config.batch_size * config.batches_per_epoch;
        let epoch_seed = config.seed.wrapping_add(0x9E37_79B9).wrapping_add(epoch as u64 * 7919);
        let pairs = sample_pairs(stage, &rankings, pair_count, epoch_seed)?;

        let mut train_loss_sum = 0.0;
        for batch in pairs.chunks(config.batch_size) {
            let mut grads = GradientSet::zeros_like(&params);
            for pair in batch {
                train_loss_sum +=
                    pair_loss(&params, &cache, pair, config.margin, Some(&mut grads))?;
            }
            grads.scale(1.0 / batch.len() as f64);
            params.apply_gradient(&grads, config.learning_rate);
        }
        let train_loss = train_loss_sum / pairs.len() as f64;

        let mut val_loss_sum = 0.0;
        for pair in &val_set {
            val_loss_sum += pair_loss(&params, &cache, pair, config.margin, None)?;
        }
        let val_loss = val_loss_sum / val_set.len() as f64;

        if !train_loss.is_finite() || !val_loss.is_finite() || !params.is_finite() {
            log.epochs.push(EpochRecord {
                epoch,
                stage: stage.name(),
                train_loss,
                val_loss,
                best: false,
            });
            return Err(Error::NonFiniteLoss { epoch, log: Box::new(log) });
        }

        let improved = val_loss < best_val;
        if improved {
            best_val = val_loss;
            best_params = params.clone();
            since_improve = 0;
        } else {
            since_improve += 1;
        }
        log.epochs.push(EpochRecord {
            epoch,
            stage: stage.name(),
            train_loss,
            val_loss,
            best: improved,
        });

        if since_improve > config.patience {
            // Early stop: jump to the next stage, or finish in the last one.
            let third = (total_epochs as f64 / 3.0).ceil() as usize;
            let next_boundary = if config.curriculum_enabled {
                match stage {
                    CurriculumStage::Easy => third,
                    CurriculumStage::Medium => 2 * third,
                    CurriculumStage::Hard => total_epochs,
                }
            } else {
                total_epochs
            };
            if next_boundary >= total_epochs {
                break;
            }
            epoch = next_boundary;
            since_improve = 0;
            continue;
        }
        epoch += 1;
    }

    Ok(TrainOutcome { params: best_params, log })
}

impl GradientSet {
    fn zeros_like(params: &EncoderParams) -> Self {
        let dims = params.dims();
        Self {
            w0: nalgebra::DMatrix::zeros(crate::graph::DESCRIPTOR_LEN, dims.h0),
            w1: nalgebra::DMatrix::zeros(dims.h0, dims.h1),
            w2: nalgebra::DMatrix::zeros(dims.h1, dims.h2),
            gate: DVector::zeros(dims.h2),
            gate_bias: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_field, render_view, CameraModel, Extent};
    use approx::assert_relative_eq;

    fn pose_list(coords: &[(f64, f64)]) -> Vec<(ViewId, Pose)> {
        coords
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| (ViewId(i as u64), Pose::new(x, y, 0.0)))
            .collect()
    }

    #[test]
    fn collinear_views_rank_by_distance() {
        let poses = pose_list(&[(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)]);
        let rankings = rank_views_by_distance(&poses).unwrap();
        assert_eq!(
            rankings.neighbors_of(ViewId(0)).unwrap(),
            vec![ViewId(1), ViewId(2)]
        );
        assert_eq!(
            rankings.neighbors_of(ViewId(2)).unwrap(),
            vec![ViewId(1), ViewId(0)]
        );
    }

    #[test]
    fn identical_positions_fall_back_to_id_order() {
        let poses = pose_list(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]);
        let rankings = rank_views_by_distance(&poses).unwrap();
        assert_eq!(
            rankings.neighbors_of(ViewId(1)).unwrap(),
            vec![ViewId(0), ViewId(2)]
        );
    }

    #[test]
    fn ranking_needs_two_views() {
        let poses = pose_list(&[(0.0, 0.0)]);
        assert!(matches!(rank_views_by_distance(&poses), Err(Error::InsufficientData(_))));
    }

    fn grid_rankings(n: usize) -> Rankings {
        let coords: Vec<(f64, f64)> = (0..n)
            .map(|i| ((i % 40) as f64 * 0.02, (i / 40) as f64 * 0.02))
            .collect();
        rank_views_by_distance(&pose_list(&coords)).unwrap()
    }

    #[test]
    fn medium_pairs_respect_windows() {
        let rankings = grid_rankings(1200);
        let pairs = sample_pairs(CurriculumStage::Medium, &rankings, 200, 5).unwrap();
        for pair in &pairs {
            let rank = rankings.rank_of(pair.graph_a, pair.graph_b).unwrap();
            if pair.label {
                assert!(rank < 5, "positive at rank {rank}");
            } else {
                assert!((9..100).contains(&rank), "negative at rank {rank}");
            }
        }
    }

    #[test]
    fn hard_pairs_exclude_two_closest() {
        let rankings = grid_rankings(1200);
        let pairs = sample_pairs(CurriculumStage::Hard, &rankings, 200, 6).unwrap();
        for pair in &pairs {
            let rank = rankings.rank_of(pair.graph_a, pair.graph_b).unwrap();
            if pair.label {
                assert!((2..5).contains(&rank), "positive at rank {rank}");
            } else {
                assert!((99..1000).contains(&rank), "negative at rank {rank}");
            }
        }
    }

    #[test]
    fn easy_pairs_use_nearest_and_far_views() {
        let rankings = grid_rankings(1200);
        let pairs = sample_pairs(CurriculumStage::Easy, &rankings, 200, 7).unwrap();
        for pair in &pairs {
            let rank = rankings.rank_of(pair.graph_a, pair.graph_b).unwrap();
            if pair.label {
                assert_eq!(rank, 0);
            } else {
                assert!(rank >= 100, "negative at rank {rank}");
            }
        }
    }

    #[test]
    fn pair_classes_are_balanced() {
        let rankings = grid_rankings(300);
        let pairs = sample_pairs(CurriculumStage::Medium, &rankings, 10, 1).unwrap();
        let positives = pairs.iter().filter(|p| p.label).count();
        assert_eq!(positives, 5);
        let odd = sample_pairs(CurriculumStage::Medium, &rankings, 11, 1).unwrap();
        let pos_odd = odd.iter().filter(|p| p.label).count() as i64;
        assert!((2 * pos_odd - 11).abs() <= 1);
    }

    #[test]
    fn pairs_never_pair_a_view_with_itself() {
        let rankings = grid_rankings(50);
        let pairs = sample_pairs(CurriculumStage::Easy, &rankings, 300, 2).unwrap();
        assert!(pairs.iter().all(|p| p.graph_a != p.graph_b));
    }

    #[test]
    fn windows_truncate_on_small_datasets() {
        let rankings = grid_rankings(12);
        // Negative windows reach far beyond 11 neighbors; sampling must stay
        // inside the list.
        let pairs = sample_pairs(CurriculumStage::Hard, &rankings, 50, 3).unwrap();
        for pair in &pairs {
            assert!(rankings.rank_of(pair.graph_a, pair.graph_b).is_some());
        }
    }

    #[test]
    fn contrastive_loss_examples() {
        assert_eq!(contrastive_loss(0.0, true, 1.0).0, 0.0);
        assert_eq!(contrastive_loss(2.0, false, 1.0).0, 0.0);
        let (loss, grad) = contrastive_loss(0.5, false, 1.0);
        assert_relative_eq!(loss, 0.25, epsilon = 1e-12);
        assert_relative_eq!(grad, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn contrastive_loss_is_continuous_at_margin() {
        let margin = 1.0;
        let below = contrastive_loss(margin - 1e-12, false, margin).0;
        let above = contrastive_loss(margin + 1e-12, false, margin).0;
        assert!(below < 1e-20 && above == 0.0);
    }

    #[test]
    fn contrastive_derivative_matches_finite_differences() {
        let margin = 1.0;
        let h = 1e-7;
        for &(d, label) in &[(0.3, true), (1.7, true), (0.4, false), (0.9, false), (1.5, false)] {
            let (_, grad) = contrastive_loss(d, label, margin);
            let fd = (contrastive_loss(d + h, label, margin).0
                - contrastive_loss(d - h, label, margin).0)
                / (2.0 * h);
            assert_relative_eq!(grad, fd, epsilon = 1e-6);
        }
    }

    fn tiny_dataset(views: usize, seed: u64) -> FloorDataset {
        let extent = Extent::square(0.5);
        let field = generate_field(extent, 30000.0, seed).unwrap();
        let camera = CameraModel::default();
        let side = (views as f64).sqrt().ceil() as usize;
        let mut records = Vec::new();
        for i in 0..views {
            let x = 0.1 + 0.02 * (i % side) as f64;
            let y = 0.1 + 0.02 * (i / side) as f64;
            let view = render_view(
                &field,
                ViewId(i as u64),
                Pose::new(x, y, 0.0),
                &camera,
                0.0,
                seed,
            )
            .unwrap();
            records.push(view);
        }
        FloorDataset { camera, field_seed: seed, views: records }
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            max_epochs: 24,
            patience: 12,
            batch_size: 8,
            batches_per_epoch: 2,
            node_count: 12,
            dims: EncoderDims { h0: 8, h1: 8, h2: 4 },
            val_pairs: 8,
            curriculum_enabled: true,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let dataset = tiny_dataset(16, 3);
        let config = quick_config();
        let a = fit(&dataset, &config).unwrap();
        let b = fit(&dataset, &config).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn fit_runs_stages_in_order() {
        let dataset = tiny_dataset(16, 3);
        let outcome = fit(&dataset, &quick_config()).unwrap();
        let stages: Vec<&str> = outcome.log.epochs.iter().map(|e| e.stage).collect();
        let first_medium = stages.iter().position(|s| *s == "medium").unwrap();
        let first_hard = stages.iter().position(|s| *s == "hard").unwrap();
        assert!(stages[..first_medium].iter().all(|s| *s == "easy"));
        assert!(first_medium < first_hard);
        assert!(stages[first_hard..].iter().all(|s| *s == "hard"));
    }

    #[test]
    fn fit_returns_best_validation_epoch() {
        let dataset = tiny_dataset(16, 3);
        let outcome = fit(&dataset, &quick_config()).unwrap();
        let best_rows: Vec<&EpochRecord> =
            outcome.log.epochs.iter().filter(|e| e.best).collect();
        assert!(!best_rows.is_empty());
        let best_val = best_rows.last().unwrap().val_loss;
        assert!(outcome.log.epochs.iter().all(|e| e.val_loss >= best_val));
    }

    #[test]
    fn zero_patience_stops_at_first_plateau() {
        let dataset = tiny_dataset(16, 3);
        let config = TrainConfig {
            patience: 0,
            curriculum_enabled: false,
            max_epochs: 400,
            ..quick_config()
        };
        let outcome = fit(&dataset, &config).unwrap();
        let epochs = &outcome.log.epochs;
        assert!(epochs.len() < 400, "expected an early stop, ran {}", epochs.len());
        assert!(!epochs.last().unwrap().best);
    }

    #[test]
    fn training_loss_decreases_on_small_dataset() {
        let dataset = tiny_dataset(50, 9);
        let config = TrainConfig {
            max_epochs: 200,
            patience: 200,
            curriculum_enabled: false,
            batch_size: 16,
            batches_per_epoch: 2,
            node_count: 12,
            dims: EncoderDims { h0: 8, h1: 8, h2: 4 },
            val_pairs: 12,
            ..TrainConfig::default()
        };
        let outcome = fit(&dataset, &config).unwrap();
        let first = outcome.log.epochs.first().unwrap().train_loss;
        let last = outcome.log.epochs.last().unwrap().train_loss;
        assert!(last < first, "loss did not decrease: first {first}, last {last}");
    }

    #[test]
    fn insufficient_data_is_reported() {
        let dataset = tiny_dataset(1, 3);
        assert!(matches!(
            fit(&dataset, &quick_config()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn training_log_round_trips_as_csv() {
        let dataset = tiny_dataset(16, 3);
        let outcome = fit(&dataset, &quick_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        outcome.log.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,stage,train_loss,val_loss,best_flag");
        assert_eq!(lines.count(), outcome.log.epochs.len());
    }
}
