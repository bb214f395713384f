//! Event batching, binary frames, median filtering, and star detection.
//!
//! Events are accumulated over fixed windows into binary occupancy frames:
//! a cell is set when at least one event of either polarity landed there
//! during the window. Frames pass through a 3x3 binary median filter
//! (majority of the 9-neighborhood, borders zero-padded) to suppress
//! salt-and-pepper noise, then an 8-connected component pass extracts
//! cluster centroids as star detections.

use thiserror::Error;

use crate::evsim::EventStream;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid batch window: {0}")]
    InvalidWindow(String),
}

/// Dense binary grid, one bit per pixel, rows padded to whole 64-bit
/// words. Slack bits past the row width are kept zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitGrid {
    width: u32,
    height: u32,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BitGrid {
    pub fn new(width: u32, height: u32) -> Self {
        let words_per_row = width.div_ceil(64) as usize;
        Self {
            width,
            height,
            words_per_row,
            words: vec![0; words_per_row * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn row(&self, y: u32) -> &[u64] {
        let start = y as usize * self.words_per_row;
        &self.words[start..start + self.words_per_row]
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        debug_assert!(x < self.width && y < self.height);
        let w = self.row(y)[x as usize / 64];
        w >> (x % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32) {
        debug_assert!(x < self.width && y < self.height);
        let idx = y as usize * self.words_per_row + x as usize / 64;
        self.words[idx] |= 1u64 << (x % 64);
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Visit every set pixel in (y, x) scan order.
    pub fn for_each_set(&self, mut f: impl FnMut(u32, u32)) {
        for y in 0..self.height {
            let row = self.row(y);
            for (wi, &word) in row.iter().enumerate() {
                let mut bits = word;
                while bits != 0 {
                    let b = bits.trailing_zeros();
                    f(wi as u32 * 64 + b, y);
                    bits &= bits - 1;
                }
            }
        }
    }

    /// Mask for the last word of a row (zeroes the slack bits).
    #[inline]
    fn tail_mask(&self) -> u64 {
        let rem = self.width % 64;
        if rem == 0 {
            u64::MAX
        } else {
            (1u64 << rem) - 1
        }
    }

    /// Majority-of-9 filter: output bit set iff at least 5 of the 9 cells
    /// in the 3x3 neighborhood (borders zero-padded) are set. Runs
    /// bit-parallel, 64 pixels per word operation.
    pub fn majority9(&self) -> BitGrid {
        let wpr = self.words_per_row;
        let mut out = BitGrid::new(self.width, self.height);
        let zero_row = vec![0u64; wpr];

        // Shifted copies of one row: bit x of `left` holds the value of
        // the cell at x-1, `right` holds the cell at x+1.
        let mut left = vec![0u64; wpr];
        let mut right = vec![0u64; wpr];
        // Bit-sliced counter planes: per-pixel count of set neighbors,
        // 4 bits (max count is 9).
        let mut s0 = vec![0u64; wpr];
        let mut s1 = vec![0u64; wpr];
        let mut s2 = vec![0u64; wpr];
        let mut s3 = vec![0u64; wpr];

        for y in 0..self.height as usize {
            for p in [&mut s0, &mut s1, &mut s2, &mut s3] {
                p.fill(0);
            }
            for dy in -1i64..=1 {
                let ny = y as i64 + dy;
                let src: &[u64] = if ny < 0 || ny >= self.height as i64 {
                    &zero_row
                } else {
                    self.row(ny as u32)
                };
                // left: cell at x-1 -> shift bits toward higher positions.
                let mut carry = 0u64;
                for (d, &s) in left.iter_mut().zip(src.iter()) {
                    *d = s << 1 | carry;
                    carry = s >> 63;
                }
                // right: cell at x+1 -> shift bits toward lower positions.
                let mut next = 0u64;
                for i in (0..wpr).rev() {
                    right[i] = src[i] >> 1 | next;
                    next = src[i] << 63;
                }
                // The cell just past the row edge is zero-padded: the
                // slack bits of src are zero by invariant, so the shift
                // into the final valid column pulls in a zero.
                for operand in [&left[..], src, &right[..]] {
                    // Bit-sliced add of a one-bit operand into (s3..s0).
                    for i in 0..wpr {
                        let x = operand[i];
                        let c0 = s0[i] & x;
                        s0[i] ^= x;
                        let c1 = s1[i] & c0;
                        s1[i] ^= c0;
                        let c2 = s2[i] & c1;
                        s2[i] ^= c1;
                        s3[i] |= c2;
                    }
                }
            }
            // count >= 5 <=> 8,9 (s3) or 5,6,7 (s2 and (s1 or s0)).
            let out_start = y * wpr;
            for i in 0..wpr {
                let mut m = s3[i] | (s2[i] & (s1[i] | s0[i]));
                if i == wpr - 1 {
                    m &= self.tail_mask();
                }
                out.words[out_start + i] = m;
            }
        }
        out
    }
}

/// One batched binary frame.
#[derive(Debug, Clone)]
pub struct EventFrame {
    /// Window `[t_start_us, t_end_us)` on the stream clock.
    pub t_start_us: u64,
    pub t_end_us: u64,
    pub grid: BitGrid,
    /// Number of events accumulated into the frame; after median
    /// filtering this becomes the surviving set-pixel count.
    pub event_count: u64,
}

impl EventFrame {
    pub fn mid_time_us(&self) -> u64 {
        self.t_start_us + (self.t_end_us - self.t_start_us) / 2
    }
}

/// A detected cluster: unweighted centroid of its pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarCentroid {
    pub x: f64,
    pub y: f64,
    pub pixel_count: u32,
}

/// Split a stream into consecutive frames of length `delta_t_us`. Frames
/// tile `[t0, t1)` half-open, so every event lands in exactly one frame;
/// the final frame may be partially covered by the stream.
pub fn batch(stream: &EventStream, delta_t_us: u64) -> Result<Vec<EventFrame>, PipelineError> {
    if delta_t_us == 0 {
        return Err(PipelineError::InvalidWindow("delta_t must be positive".into()));
    }
    if stream.t1_us < stream.t0_us {
        return Err(PipelineError::InvalidWindow(format!(
            "stream extent [{}, {}) is inverted",
            stream.t0_us, stream.t1_us
        )));
    }
    let span = stream.t1_us - stream.t0_us;
    let n_frames = span.div_ceil(delta_t_us);
    let mut frames: Vec<EventFrame> = (0..n_frames)
        .map(|k| EventFrame {
            t_start_us: stream.t0_us + k * delta_t_us,
            t_end_us: stream.t0_us + (k + 1) * delta_t_us,
            grid: BitGrid::new(stream.width, stream.height),
            event_count: 0,
        })
        .collect();
    for e in &stream.events {
        debug_assert!(e.t_us >= stream.t0_us && e.t_us < stream.t1_us);
        let k = ((e.t_us - stream.t0_us) / delta_t_us) as usize;
        let frame = &mut frames[k];
        frame.grid.set(e.x as u32, e.y as u32);
        frame.event_count += 1;
    }
    Ok(frames)
}

/// 3x3 binary median filter: a pixel survives iff at least 5 of the 9
/// cells in its neighborhood are set (borders zero-padded). The returned
/// frame's `event_count` is the surviving set-pixel count.
pub fn median_filter(frame: &EventFrame) -> EventFrame {
    let grid = frame.grid.majority9();
    let event_count = grid.count_ones();
    EventFrame {
        t_start_us: frame.t_start_us,
        t_end_us: frame.t_end_us,
        grid,
        event_count,
    }
}

/// Extract 8-connected clusters of at least `min_cluster_size` set pixels
/// and return their unweighted centroids, largest cluster first (ties
/// broken by centroid position for determinism).
pub fn detect_stars(frame: &EventFrame, min_cluster_size: u32) -> Vec<StarCentroid> {
    let grid = &frame.grid;
    let mut visited = BitGrid::new(grid.width(), grid.height());
    let mut out = Vec::new();
    let mut stack: Vec<(u32, u32)> = Vec::new();

    grid.for_each_set(|x, y| {
        if visited.get(x, y) {
            return;
        }
        visited.set(x, y);
        stack.push((x, y));
        let mut count: u64 = 0;
        let mut sum_x: u64 = 0;
        let mut sum_y: u64 = 0;
        while let Some((px, py)) = stack.pop() {
            count += 1;
            sum_x += px as u64;
            sum_y += py as u64;
            let x0 = px.saturating_sub(1);
            let x1 = (px + 1).min(grid.width() - 1);
            let y0 = py.saturating_sub(1);
            let y1 = (py + 1).min(grid.height() - 1);
            for ny in y0..=y1 {
                for nx in x0..=x1 {
                    if (nx != px || ny != py) && grid.get(nx, ny) && !visited.get(nx, ny) {
                        visited.set(nx, ny);
                        stack.push((nx, ny));
                    }
                }
            }
        }
        if count >= min_cluster_size as u64 {
            out.push(StarCentroid {
                x: sum_x as f64 / count as f64,
                y: sum_y as f64 / count as f64,
                pixel_count: count as u32,
            });
        }
    });

    out.sort_by(|a, b| {
        b.pixel_count
            .cmp(&a.pixel_count)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    out
}
