use std::collections::HashMap;

use super::{DetectorConfig, InterestPoint};

/// Output of distributed selection, laid out as `[top | spread | fill]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub points: Vec<InterestPoint>,
    /// The `m` strongest points.
    pub n_top: usize,
    /// Points added by the non-overlap scan.
    pub n_spread: usize,
}

impl Selection {
    pub fn top(&self) -> &[InterestPoint] {
        &self.points[..self.n_top]
    }

    pub fn spread(&self) -> &[InterestPoint] {
        &self.points[self.n_top..self.n_top + self.n_spread]
    }

    pub fn fill(&self) -> &[InterestPoint] {
        &self.points[self.n_top + self.n_spread..]
    }
}

pub fn select_distributed(points: &[InterestPoint], cfg: &DetectorConfig) -> Vec<InterestPoint> {
    select_distributed_detailed(points, cfg).points
}

/// Keeps the `top` strongest points, then scans the rest by decreasing
/// response and adds a point only if its disk (radius `overlap_factor *
/// scale`) touches no disk selected so far, until `points` are selected.
/// When the scan runs dry the highest-response skipped points fill the gap.
pub fn select_distributed_detailed(points: &[InterestPoint], cfg: &DetectorConfig) -> Selection {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.scale.total_cmp(&b.scale))
    });

    let capacity = cfg.points.min(sorted.len());
    let n_top = cfg.top.min(capacity);
    let wanted = capacity - n_top;

    let mut grid = DiskGrid::new(cell_size(&sorted, cfg.overlap_factor));
    for p in &sorted[..n_top] {
        grid.insert(p, cfg.overlap_factor);
    }

    let mut spread = Vec::with_capacity(wanted);
    let mut skipped = Vec::new();
    for p in &sorted[n_top..] {
        if spread.len() == wanted {
            break;
        }
        if grid.overlaps(p, cfg.overlap_factor) {
            skipped.push(*p);
        } else {
            grid.insert(p, cfg.overlap_factor);
            spread.push(*p);
        }
    }
    let n_spread = spread.len();

    let mut selected = sorted[..n_top].to_vec();
    selected.extend(spread);
    // skipped is already in response order
    selected.extend(skipped.into_iter().take(wanted - n_spread));
    Selection {
        points: selected,
        n_top,
        n_spread,
    }
}

fn cell_size(points: &[InterestPoint], factor: f64) -> f64 {
    let median_scale = if points.is_empty() {
        1.0
    } else {
        let mut scales: Vec<f32> = points.iter().map(|p| p.scale).collect();
        scales.sort_by(f32::total_cmp);
        scales[scales.len() / 2] as f64
    };
    (2.0 * factor * median_scale).max(4.0)
}

/// Uniform bucket grid over the disks selected so far.
struct DiskGrid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<(f64, f64, f64)>>,
}

impl DiskGrid {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            buckets: HashMap::new(),
        }
    }

    fn span(&self, x: f64, y: f64, r: f64) -> (i64, i64, i64, i64) {
        (
            ((x - r) / self.cell).floor() as i64,
            ((y - r) / self.cell).floor() as i64,
            ((x + r) / self.cell).floor() as i64,
            ((y + r) / self.cell).floor() as i64,
        )
    }

    fn insert(&mut self, p: &InterestPoint, factor: f64) {
        let (x, y, r) = (p.x as f64, p.y as f64, factor * p.scale as f64);
        let (cx0, cy0, cx1, cy1) = self.span(x, y, r);
        for cy in cy0..=cy1 {
            for cx in cx0..=cx1 {
                self.buckets.entry((cx, cy)).or_default().push((x, y, r));
            }
        }
    }

    fn overlaps(&self, p: &InterestPoint, factor: f64) -> bool {
        let (x, y, r) = (p.x as f64, p.y as f64, factor * p.scale as f64);
        let (cx0, cy0, cx1, cy1) = self.span(x, y, r);
        for cy in cy0..=cy1 {
            for cx in cx0..=cx1 {
                if let Some(disks) = self.buckets.get(&(cx, cy)) {
                    if disks.iter().any(|&(ox, oy, or)| disks_overlap(x, y, r, ox, oy, or)) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Disks overlap when their centres are closer than the sum of the radii.
#[inline]
pub(crate) fn disks_overlap(x1: f64, y1: f64, r1: f64, x2: f64, y2: f64, r2: f64) -> bool {
    let (dx, dy) = (x1 - x2, y1 - y2);
    dx * dx + dy * dy < (r1 + r2) * (r1 + r2)
}
