use super::AtomSite;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Bucket grid for neighbour queries over sites.
struct CellGrid {
    cell: f64,
    cols: i64,
    rows: i64,
    x0: f64,
    y0: f64,
    buckets: Vec<Vec<usize>>,
}

impl CellGrid {
    fn new(sites: &[AtomSite], cell: f64) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for s in sites {
            x0 = x0.min(s.x);
            y0 = y0.min(s.y);
            x1 = x1.max(s.x);
            y1 = y1.max(s.y);
        }
        let cols = ((x1 - x0) / cell).floor() as i64 + 1;
        let rows = ((y1 - y0) / cell).floor() as i64 + 1;
        let mut g = CellGrid {
            cell,
            cols,
            rows,
            x0,
            y0,
            buckets: vec![Vec::new(); (cols * rows) as usize],
        };
        for (i, s) in sites.iter().enumerate() {
            let (cx, cy) = g.cell_of(s.x, s.y);
            g.buckets[(cy * cols + cx) as usize].push(i);
        }
        g
    }

    fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            (((x - self.x0) / self.cell).floor() as i64).clamp(0, self.cols - 1),
            (((y - self.y0) / self.cell).floor() as i64).clamp(0, self.rows - 1),
        )
    }

    fn around(&self, x: f64, y: f64) -> impl Iterator<Item = usize> + '_ {
        let (cx, cy) = self.cell_of(x, y);
        (cy - 1..=cy + 1)
            .flat_map(move |r| (cx - 1..=cx + 1).map(move |c| (c, r)))
            .filter(|&(c, r)| c >= 0 && r >= 0 && c < self.cols && r < self.rows)
            .flat_map(move |(c, r)| self.buckets[(r * self.cols + c) as usize].iter().copied())
    }
}

/// Remove each site independently with probability `p_delete`.
pub fn apply_defects(sites: &[AtomSite], p_delete: f64, rng: &mut SeededRng) -> Result<Vec<AtomSite>> {
    if !(0.0..=1.0).contains(&p_delete) {
        return Err(Error::param(format!("p_delete must lie in [0, 1], got {p_delete}")));
    }
    Ok(sites.iter().filter(|_| !rng.bernoulli(p_delete)).copied().collect())
}

/// Interstitial candidates: midpoints of nearest-neighbour pairs (within 5%
/// of each site's nearest distance) lying strictly inside the frame.
pub fn interstitial_candidates(sites: &[AtomSite], size: usize) -> Vec<(f64, f64)> {
    if sites.len() < 2 {
        return Vec::new();
    }
    let mut nn = vec![f64::INFINITY; sites.len()];
    // a coarse probe first so the grid cell bounds the nearest distance
    let span = sites
        .iter()
        .fold(0.0f64, |m, s| m.max(s.x.abs()).max(s.y.abs()))
        .max(1.0);
    let mut cell = (2.0 * span) / (sites.len() as f64).sqrt();
    loop {
        let grid = CellGrid::new(sites, cell);
        let mut ok = true;
        for (i, s) in sites.iter().enumerate() {
            for j in grid.around(s.x, s.y) {
                if j != i {
                    nn[i] = nn[i].min((s.x - sites[j].x).hypot(s.y - sites[j].y));
                }
            }
            if nn[i] > cell {
                ok = false;
            }
        }
        if ok {
            break;
        }
        cell *= 2.0;
        nn.iter_mut().for_each(|v| *v = f64::INFINITY);
    }
    let grid = CellGrid::new(sites, cell);
    let lim = size as f64;
    let mut out = Vec::new();
    for (i, s) in sites.iter().enumerate() {
        let mut js: Vec<usize> = grid.around(s.x, s.y).filter(|&j| j > i).collect();
        js.sort_unstable();
        for j in js {
            let d = (s.x - sites[j].x).hypot(s.y - sites[j].y);
            if d <= 1.05 * nn[i].min(nn[j]) {
                let (mx, my) = (0.5 * (s.x + sites[j].x), 0.5 * (s.y + sites[j].y));
                if mx > 0.0 && mx < lim && my > 0.0 && my < lim {
                    out.push((mx, my));
                }
            }
        }
    }
    out
}

/// Add a site at each interstitial candidate with probability `p_add`.
/// Spot width and brightness are drawn uniformly from the given ranges.
pub fn apply_embeddings(
    sites: &[AtomSite],
    p_add: f64,
    size: usize,
    sigma_range: [f64; 2],
    brightness_range: [f64; 2],
    rng: &mut SeededRng,
) -> Result<Vec<AtomSite>> {
    if !(0.0..=1.0).contains(&p_add) {
        return Err(Error::param(format!("p_add must lie in [0, 1], got {p_add}")));
    }
    let mut out = sites.to_vec();
    for (x, y) in interstitial_candidates(sites, size) {
        if rng.bernoulli(p_add) {
            out.push(AtomSite {
                x,
                y,
                sigma: rng.uniform_range(sigma_range[0], sigma_range[1]),
                rel_brightness: rng
                    .uniform_range(brightness_range[0], brightness_range[1])
                    .clamp(1e-3, 1.0),
            });
        }
    }
    Ok(out)
}

/// Random sequential placement of `density * size^2` sites, rejecting any
/// closer than `2.5 * sigma_range[1]` to an accepted site.
pub fn build_random(
    size: usize,
    density: f64,
    sigma_range: [f64; 2],
    brightness_range: [f64; 2],
    rng: &mut SeededRng,
) -> Result<Vec<AtomSite>> {
    if !(density > 0.0) {
        return Err(Error::param(format!("density must be positive, got {density}")));
    }
    let side = size as f64;
    let target = (density * side * side).round() as usize;
    let min_d = 2.5 * sigma_range[1];
    let cell = min_d.max(1.0);
    let cols = (side / cell).ceil() as usize + 1;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cols * cols];
    let mut sites: Vec<AtomSite> = Vec::with_capacity(target);
    let max_attempts = 10 * target.max(1);
    let mut attempts = 0;
    while sites.len() < target && attempts < max_attempts {
        attempts += 1;
        let (x, y) = (rng.uniform() * side, rng.uniform() * side);
        let (cx, cy) = ((x / cell) as usize, (y / cell) as usize);
        let mut clear = true;
        'scan: for r in cy.saturating_sub(1)..=(cy + 1).min(cols - 1) {
            for c in cx.saturating_sub(1)..=(cx + 1).min(cols - 1) {
                for &k in &buckets[r * cols + c] {
                    if (sites[k].x - x).hypot(sites[k].y - y) < min_d {
                        clear = false;
                        break 'scan;
                    }
                }
            }
        }
        if clear {
            buckets[cy * cols + cx].push(sites.len());
            sites.push(AtomSite {
                x,
                y,
                sigma: rng.uniform_range(sigma_range[0], sigma_range[1]),
                rel_brightness: rng
                    .uniform_range(brightness_range[0], brightness_range[1])
                    .clamp(1e-3, 1.0),
            });
        }
    }
    if sites.len() < target {
        return Err(Error::DensityTooHigh {
            placed: sites.len(),
            target,
            attempts,
        });
    }
    Ok(sites)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_sites(n: usize, a: f64) -> Vec<AtomSite> {
        let mut v = Vec::new();
        for j in 0..n {
            for i in 0..n {
                v.push(AtomSite {
                    x: a * (i as f64 + 0.5),
                    y: a * (j as f64 + 0.5),
                    sigma: 3.0,
                    rel_brightness: 1.0,
                });
            }
        }
        v
    }

    #[test]
    fn defects_extremes_and_rate() {
        let s = grid_sites(10, 10.0);
        let mut rng = SeededRng::new(1);
        assert_eq!(apply_defects(&s, 0.0, &mut rng).unwrap(), s);
        assert!(apply_defects(&s, 1.0, &mut rng).unwrap().is_empty());
        assert!(apply_defects(&s, 1.5, &mut rng).is_err());
        let big: Vec<AtomSite> = grid_sites(32, 8.0).into_iter().take(1000).collect();
        let mut removed = 0usize;
        for seed in 0..100 {
            let mut r = SeededRng::new(seed);
            removed += 1000 - apply_defects(&big, 0.1, &mut r).unwrap().len();
        }
        let mean = removed as f64 / 100.0;
        assert!((mean - 100.0).abs() < 10.0, "{mean}");
    }

    #[test]
    fn embedding_candidates_on_square_grid() {
        let s = grid_sites(16, 16.0);
        let c = interstitial_candidates(&s, 256);
        // horizontal + vertical neighbour pairs
        assert_eq!(c.len(), 2 * 16 * 15);
        let mut rng = SeededRng::new(2);
        assert_eq!(
            apply_embeddings(&s, 0.0, 256, [2.0, 3.0], [0.5, 1.0], &mut rng).unwrap(),
            s
        );
    }

    #[test]
    fn embeddings_inside_frame_and_binomial() {
        let s = grid_sites(16, 16.0);
        let n = interstitial_candidates(&s, 256).len() as f64;
        let p = 0.05;
        let sd = (n * p * (1.0 - p)).sqrt();
        for seed in 0..20 {
            let mut rng = SeededRng::new(seed);
            let out = apply_embeddings(&s, p, 256, [2.0, 3.0], [0.5, 1.0], &mut rng).unwrap();
            let added = &out[s.len()..];
            assert!((added.len() as f64 - n * p).abs() <= 3.0 * sd);
            for a in added {
                assert!(a.x > 0.0 && a.x < 256.0 && a.y > 0.0 && a.y < 256.0);
            }
        }
    }

    #[test]
    fn random_counts_and_spacing() {
        let mut counts = 0.0;
        for seed in 0..10 {
            let mut rng = SeededRng::new(seed);
            let s = build_random(256, 0.002, [2.0, 4.0], [0.5, 1.0], &mut rng).unwrap();
            counts += s.len() as f64 / 10.0;
            for (i, a) in s.iter().enumerate() {
                for b in &s[i + 1..] {
                    assert!((a.x - b.x).hypot(a.y - b.y) >= 10.0);
                }
            }
        }
        assert!((counts - 131.0).abs() <= 15.0);
        let mut rng = SeededRng::new(1);
        assert!(build_random(256, 1e-6, [2.0, 4.0], [0.5, 1.0], &mut rng).unwrap().len() <= 1);
        assert!(matches!(
            build_random(64, 0.5, [2.0, 4.0], [0.5, 1.0], &mut rng),
            Err(Error::DensityTooHigh { .. })
        ));
    }
}
