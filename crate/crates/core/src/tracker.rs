//! Local star map and frame-to-map translation estimation.
//!
//! The tracker seeds a map of star centroids from the first frame with
//! enough detections (that frame becomes the origin), then estimates each
//! subsequent frame's cumulative 2-D image translation against the map:
//! detections are gated and matched to map stars near their predicted
//! positions, per-pair displacement hypotheses are scored RANSAC-style,
//! and the final translation is the mean displacement over the inlier
//! set. The origin is never re-anchored, so the cumulative translation
//! stays continuous for the life of the tracker.

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::pipeline::{detect_stars, EventFrame, StarCentroid};
use crate::Vec2;

/// Tunables for matching, estimation, and map maintenance.
#[derive(Debug, Clone)]
pub struct TrackerConfig {
    /// Max detection-to-predicted-map-star distance for a match.
    pub gate_radius_px: f64,
    /// Two map stars are never kept within this distance of each other.
    pub merge_radius_px: f64,
    /// Map stars unseen for more than this many frames are dropped.
    pub stale_after_frames: u64,
    /// Max residual for a pair to count as an inlier of a hypothesis.
    pub inlier_threshold_px: f64,
    /// Hypotheses evaluated: all pairs when fewer, else a seeded sample.
    pub max_hypotheses: usize,
    /// Stop scanning hypotheses once this inlier fraction is reached.
    pub early_exit_fraction: f64,
    /// Inliers needed for a confident estimate.
    pub min_confident_inliers: u32,
    /// Consecutive non-confident frames before the track counts as lost.
    pub lost_after_frames: u32,
    /// Minimum merged-cluster size for a detection to be used.
    pub min_cluster_size: u32,
    /// Detections within this distance merge into one (a moving star's
    /// leading and trailing change pixels arrive as separate fragments).
    pub agglomerate_radius_px: f64,
    /// When > 0, only detections that reoccupy a position seen in the
    /// previous frame (within this radius) are used. Under large
    /// per-frame jumps a star's old position is vacated (events at the
    /// old footprint) and its new one populated; the vacated cluster
    /// reoccupies a known position while the newly occupied one does
    /// not appear until the following frame, so this filter keeps the
    /// estimate pinned to window-start positions instead of mixing the
    /// two. 0 disables the filter.
    pub persistence_radius_px: f64,
    /// Seed for hypothesis sampling when pairs exceed `max_hypotheses`.
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate_radius_px: 24.0,
            merge_radius_px: 3.0,
            stale_after_frames: 5,
            inlier_threshold_px: 1.5,
            max_hypotheses: 32,
            early_exit_fraction: 0.8,
            min_confident_inliers: 3,
            lost_after_frames: 10,
            min_cluster_size: 4,
            agglomerate_radius_px: 6.0,
            persistence_radius_px: 0.0,
            seed: 0x5EED,
        }
    }
}

/// One star in the map, held in origin-frame pixel coordinates.
#[derive(Debug, Clone, Copy)]
pub struct MapStar {
    pub pos: Vec2,
    pub last_seen: u64,
}

/// The local star map. Seeded once; never re-anchored.
#[derive(Debug, Clone, Default)]
pub struct StarMap {
    pub stars: Vec<MapStar>,
    pub origin_frame: u64,
}

/// Per-frame translation estimate.
#[derive(Debug, Clone, Copy)]
pub struct MotionEstimate {
    /// Stamp: midpoint of the frame window.
    pub t_us: u64,
    /// Cumulative translation from the origin frame, pixels.
    pub t: Vec2,
    /// Increment relative to the previous frame's estimate, pixels.
    pub per_frame: Vec2,
    pub inlier_count: u32,
    pub confident: bool,
}

/// Greedy injective nearest-neighbour matching. Map stars are shifted by
/// `prior_t` to predicted positions; candidate pairs within `gate_radius`
/// are accepted in ascending distance order, each detection and each map
/// star used at most once. Returns (detection index, map index) pairs
/// sorted by detection index.
pub fn associate(
    detections: &[StarCentroid],
    map: &StarMap,
    prior_t: Vec2,
    gate_radius: f64,
) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (di, d) in detections.iter().enumerate() {
        let dp = Vector2::new(d.x, d.y);
        for (mi, m) in map.stars.iter().enumerate() {
            let dist = (dp - (m.pos + prior_t)).norm();
            if dist <= gate_radius {
                candidates.push((dist, di, mi));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_used = vec![false; detections.len()];
    let mut map_used = vec![false; map.stars.len()];
    let mut pairs = Vec::new();
    for (_, di, mi) in candidates {
        if !det_used[di] && !map_used[mi] {
            det_used[di] = true;
            map_used[mi] = true;
            pairs.push((di, mi));
        }
    }
    pairs.sort_by_key(|&(di, _)| di);
    pairs
}

/// Translation consensus over per-pair displacement vectors.
///
/// Every displacement is itself a full hypothesis (one correspondence
/// determines a 2-DOF translation). All hypotheses are scanned in index
/// order when there are at most `max_hypotheses`, otherwise a seeded
/// sample of that size (scanned in ascending index order). A pair is an
/// inlier of a hypothesis when its displacement differs by at most
/// `inlier_threshold` (L2). The best hypothesis wins by inlier count,
/// then lower residual sum of squares, then scan order; scanning stops
/// early once a hypothesis reaches `early_exit_fraction` of all pairs.
/// Returns the component-wise mean displacement over the winning inlier
/// set and the inlier count, or None for zero pairs.
pub fn ransac_translation(
    displacements: &[Vec2],
    inlier_threshold: f64,
    max_hypotheses: usize,
    early_exit_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec2, u32)> {
    let n = displacements.len();
    if n == 0 {
        return None;
    }
    let hypothesis_order: Vec<usize> = if n <= max_hypotheses {
        (0..n).collect()
    } else {
        let mut sampled = rand::seq::index::sample(rng, n, max_hypotheses).into_vec();
        sampled.sort_unstable();
        sampled
    };

    let mut best_count = 0usize;
    let mut best_rss = f64::INFINITY;
    let mut best_inliers: Vec<usize> = Vec::new();
    for &h in &hypothesis_order {
        let t_h = displacements[h];
        let mut inliers = Vec::new();
        let mut rss = 0.0;
        for (i, d) in displacements.iter().enumerate() {
            let r2 = (d - t_h).norm_squared();
            if r2.sqrt() <= inlier_threshold {
                inliers.push(i);
                rss += r2;
            }
        }
        let count = inliers.len();
        if count > best_count || (count == best_count && rss < best_rss) {
            best_count = count;
            best_rss = rss;
            best_inliers = inliers;
        }
        if count as f64 / n as f64 >= early_exit_fraction {
            break;
        }
    }

    let mut sum = Vec2::zeros();
    for &i in &best_inliers {
        sum += displacements[i];
    }
    Some((sum / best_count as f64, best_count as u32))
}

/// Merge detections within `radius` of each other (single linkage) into
/// pixel-count-weighted centroids. A star whose frame footprint is split
/// into leading/trailing change fragments comes back as one detection.
pub fn agglomerate(detections: &[StarCentroid], radius: f64) -> Vec<StarCentroid> {
    let n = detections.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    let r2 = radius * radius;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = detections[i].x - detections[j].x;
            let dy = detections[i].y - detections[j].y;
            if dx * dx + dy * dy <= r2 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut merged: Vec<(f64, f64, u64)> = Vec::new();
    let mut root_slot: Vec<Option<usize>> = vec![None; n];
    for (i, d) in detections.iter().enumerate() {
        let root = find(&mut parent, i);
        let slot = *root_slot[root].get_or_insert_with(|| {
            merged.push((0.0, 0.0, 0));
            merged.len() - 1
        });
        let w = d.pixel_count as f64;
        merged[slot].0 += d.x * w;
        merged[slot].1 += d.y * w;
        merged[slot].2 += d.pixel_count as u64;
    }
    let mut out: Vec<StarCentroid> = merged
        .into_iter()
        .map(|(sx, sy, count)| StarCentroid {
            x: sx / count as f64,
            y: sy / count as f64,
            pixel_count: count as u32,
        })
        .collect();
    out.sort_by(|a, b| {
        b.pixel_count
            .cmp(&a.pixel_count)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    out
}

/// Refresh matched stars, insert unmatched detections while matches are
/// scarce, and drop stale stars.
pub fn update_map(
    map: &mut StarMap,
    detections: &[StarCentroid],
    pairs: &[(usize, usize)],
    estimate_t: Vec2,
    frame_index: u64,
    cfg: &TrackerConfig,
) {
    for &(_, mi) in pairs {
        map.stars[mi].last_seen = frame_index;
    }
    if pairs.len() < 3 {
        let matched_dets: Vec<usize> = pairs.iter().map(|&(di, _)| di).collect();
        for (di, d) in detections.iter().enumerate() {
            if matched_dets.contains(&di) {
                continue;
            }
            let origin_pos = Vector2::new(d.x, d.y) - estimate_t;
            let crowded = map
                .stars
                .iter()
                .any(|m| (m.pos - origin_pos).norm() < cfg.merge_radius_px);
            if !crowded {
                map.stars.push(MapStar { pos: origin_pos, last_seen: frame_index });
            }
        }
    }
    map.stars
        .retain(|m| frame_index - m.last_seen <= cfg.stale_after_frames);
}

/// Sequential frame-to-map tracker.
pub struct Tracker {
    cfg: TrackerConfig,
    rng: ChaCha8Rng,
    map: Option<StarMap>,
    cumulative: Vec2,
    frame_idx: u64,
    non_confident_streak: u32,
    prev_positions: Vec<Vec2>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self {
            cfg,
            rng,
            map: None,
            cumulative: Vec2::zeros(),
            frame_idx: 0,
            non_confident_streak: 0,
            prev_positions: Vec::new(),
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn map(&self) -> Option<&StarMap> {
        self.map.as_ref()
    }

    /// True while the tracker has gone more than `lost_after_frames`
    /// consecutive matchable frames without a confident estimate. Frames
    /// with fewer detections than the confidence bar are neutral: a
    /// stationary or well-stabilized field emits almost nothing, and
    /// silence is consistent with a held lock, not evidence against it.
    pub fn track_lost(&self) -> bool {
        self.non_confident_streak > self.cfg.lost_after_frames
    }

    /// Detect, merge, and process one frame.
    pub fn process(&mut self, frame: &EventFrame) -> MotionEstimate {
        let raw = detect_stars(frame, 1);
        let merged = agglomerate(&raw, self.cfg.agglomerate_radius_px);
        let detections: Vec<StarCentroid> = merged
            .into_iter()
            .filter(|d| d.pixel_count >= self.cfg.min_cluster_size)
            .collect();
        self.process_detections(frame.mid_time_us(), detections)
    }

    /// Core per-frame step on already-extracted detections.
    pub fn process_detections(
        &mut self,
        t_us: u64,
        detections: Vec<StarCentroid>,
    ) -> MotionEstimate {
        let frame_idx = self.frame_idx;
        self.frame_idx += 1;
        // Enough detections arrived that a confident match was possible.
        let matchable = detections.len() >= self.cfg.min_confident_inliers as usize;

        let usable: Vec<StarCentroid> = if self.cfg.persistence_radius_px > 0.0
            && !self.prev_positions.is_empty()
        {
            let r = self.cfg.persistence_radius_px;
            detections
                .iter()
                .filter(|d| {
                    self.prev_positions
                        .iter()
                        .any(|p| (Vector2::new(d.x, d.y) - p).norm() <= r)
                })
                .copied()
                .collect()
        } else {
            detections.clone()
        };
        self.prev_positions = detections
            .iter()
            .map(|d| Vector2::new(d.x, d.y))
            .collect();

        let estimate = match &mut self.map {
            None => {
                if usable.len() >= 3 {
                    let mut map = StarMap { stars: Vec::new(), origin_frame: frame_idx };
                    for d in &usable {
                        let pos = Vector2::new(d.x, d.y);
                        let crowded = map
                            .stars
                            .iter()
                            .any(|m| (m.pos - pos).norm() < self.cfg.merge_radius_px);
                        if !crowded {
                            map.stars.push(MapStar { pos, last_seen: frame_idx });
                        }
                    }
                    let seeded = map.stars.len() as u32;
                    self.map = Some(map);
                    MotionEstimate {
                        t_us,
                        t: Vec2::zeros(),
                        per_frame: Vec2::zeros(),
                        inlier_count: seeded,
                        confident: seeded >= self.cfg.min_confident_inliers,
                    }
                } else {
                    MotionEstimate {
                        t_us,
                        t: Vec2::zeros(),
                        per_frame: Vec2::zeros(),
                        inlier_count: 0,
                        confident: false,
                    }
                }
            }
            Some(map) => {
                let pairs = associate(&usable, map, self.cumulative, self.cfg.gate_radius_px);
                let displacements: Vec<Vec2> = pairs
                    .iter()
                    .map(|&(di, mi)| {
                        Vector2::new(usable[di].x, usable[di].y) - map.stars[mi].pos
                    })
                    .collect();
                match ransac_translation(
                    &displacements,
                    self.cfg.inlier_threshold_px,
                    self.cfg.max_hypotheses,
                    self.cfg.early_exit_fraction,
                    &mut self.rng,
                ) {
                    Some((t_new, inlier_count)) => {
                        let per_frame = t_new - self.cumulative;
                        self.cumulative = t_new;
                        update_map(map, &usable, &pairs, t_new, frame_idx, &self.cfg);
                        MotionEstimate {
                            t_us,
                            t: t_new,
                            per_frame,
                            inlier_count,
                            confident: inlier_count >= self.cfg.min_confident_inliers,
                        }
                    }
                    None => {
                        // No motion consensus: freeze the map rather than
                        // aging it out, so a long outage stays recoverable.
                        MotionEstimate {
                            t_us,
                            t: self.cumulative,
                            per_frame: Vec2::zeros(),
                            inlier_count: 0,
                            confident: false,
                        }
                    }
                }
            }
        };

        if estimate.confident {
            self.non_confident_streak = 0;
        } else if matchable {
            self.non_confident_streak = self.non_confident_streak.saturating_add(1);
        }
        estimate
    }

    /// Run the whole detect-match-estimate-update loop over a frame
    /// sequence; element k is the estimate for frame k.
    pub fn track(&mut self, frames: &[EventFrame]) -> Vec<MotionEstimate> {
        frames.iter().map(|f| self.process(f)).collect()
    }
}
