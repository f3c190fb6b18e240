//! Broken-line prior: Hough line (square mesh) or circle (circular mesh)
//! detection on the binarized image, redrawn as an idealized lattice and
//! compared against the observed metal.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{binarize, dilate, otsu_threshold, BinaryMask, GrayImage, Polarity};
use crate::MeshType;

/// Line `x*cos(theta) + y*sin(theta) = rho`, origin at the top-left pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineParam {
    pub rho: f64,
    /// Radians in [0, pi).
    pub theta: f64,
    pub votes: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleParam {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub votes: u32,
}

impl fmt::Display for LineParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line rho={:.3} theta={:.6} votes={}", self.rho, self.theta, self.votes)
    }
}

impl fmt::Display for CircleParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "circle cx={:.3} cy={:.3} r={:.3} votes={}",
            self.cx, self.cy, self.r, self.votes
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoughConfig {
    /// Pixels per rho bin.
    pub rho_resolution: f64,
    /// Radians per theta bin.
    pub theta_resolution: f64,
    /// Minimum accumulator votes. `None` picks a scale-dependent default:
    /// half the smaller image side for lines, half the digital circumference
    /// for circles.
    pub vote_threshold: Option<u32>,
    /// Inclusive integer radius interval searched for circles. `None` means
    /// `[4, min(h, w) / 2]`.
    pub radius_range: Option<(usize, usize)>,
    pub dilate_radius: usize,
    /// Fraction of a detected primitive's rasterized pixels that must lie on
    /// foreground. Rejects lines that merely cross many lattice intersections.
    pub min_support: f64,
}

impl Default for HoughConfig {
    fn default() -> Self {
        Self {
            rho_resolution: 1.0,
            theta_resolution: PI / 180.0,
            vote_threshold: None,
            radius_range: None,
            dilate_radius: 2,
            min_support: 0.6,
        }
    }
}

impl HoughConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_resolution > 0.0) {
            return Err(Error::invalid("rho_resolution", "must be > 0"));
        }
        if !(self.theta_resolution > 0.0 && self.theta_resolution < PI) {
            return Err(Error::invalid("theta_resolution", "must be in (0, pi)"));
        }
        if self.vote_threshold == Some(0) {
            return Err(Error::invalid("vote_threshold", "must be >= 1"));
        }
        if let Some((lo, hi)) = self.radius_range {
            if lo == 0 || lo > hi {
                return Err(Error::invalid("radius_range", format!("[{lo}, {hi}] is empty or contains 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.min_support) {
            return Err(Error::invalid("min_support", "must be in [0, 1]"));
        }
        Ok(())
    }

    fn radii(&self, h: usize, w: usize) -> (usize, usize) {
        self.radius_range.unwrap_or((4, (h.min(w) / 2).max(4)))
    }
}

#[inline]
fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Pixels of the line inside an `h x w` image, one per step along the major axis.
pub fn line_pixels(line: &LineParam, h: usize, w: usize) -> Vec<(usize, usize)> {
    let (s, c) = line.theta.sin_cos();
    let mut out = Vec::new();
    if c.abs() >= s.abs() {
        for y in 0..h {
            let x = round_half_up((line.rho - y as f64 * s) / c);
            if (0..w as i64).contains(&x) {
                out.push((y, x as usize));
            }
        }
    } else {
        for x in 0..w {
            let y = round_half_up((line.rho - x as f64 * c) / s);
            if (0..h as i64).contains(&y) {
                out.push((y as usize, x));
            }
        }
    }
    out
}

/// Integer midpoint circle offsets `(dy, dx)` for radius `r`, sorted and deduplicated.
pub fn circle_offsets(r: usize) -> Vec<(i64, i64)> {
    let r = r as i64;
    let mut set = BTreeSet::new();
    let (mut x, mut y, mut d) = (r, 0i64, 1 - r);
    while x >= y {
        for (a, b) in [(x, y), (y, x)] {
            for (sa, sb) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                set.insert((sb * b, sa * a));
            }
        }
        y += 1;
        if d < 0 {
            d += 2 * y + 1;
        } else {
            x -= 1;
            d += 2 * (y - x) + 1;
        }
    }
    set.into_iter().collect()
}

pub fn circle_pixels(circle: &CircleParam, h: usize, w: usize) -> Vec<(usize, usize)> {
    let (cy, cx) = (round_half_up(circle.cy), round_half_up(circle.cx));
    let r = round_half_up(circle.r).max(0) as usize;
    circle_offsets(r)
        .into_iter()
        .filter_map(|(dy, dx)| {
            let (y, x) = (cy + dy, cx + dx);
            ((0..h as i64).contains(&y) && (0..w as i64).contains(&x)).then_some((y as usize, x as usize))
        })
        .collect()
}

fn support(mask: &BinaryMask, pixels: &[(usize, usize)]) -> f64 {
    if pixels.is_empty() {
        return 0.0;
    }
    pixels.iter().filter(|&&(y, x)| mask.get(y, x)).count() as f64 / pixels.len() as f64
}

/// Line accumulator indexed `[theta][rho]`.
pub struct LineAccumulator {
    pub votes: Vec<u32>,
    pub n_theta: usize,
    pub n_rho: usize,
    /// Bin index of rho = 0.
    pub rho_offset: usize,
    pub rho_resolution: f64,
    pub theta_resolution: f64,
}

impl LineAccumulator {
    pub fn get(&self, t: usize, r: usize) -> u32 {
        self.votes[t * self.n_rho + r]
    }

    pub fn rho_of(&self, r: usize) -> f64 {
        (r as f64 - self.rho_offset as f64) * self.rho_resolution
    }

    pub fn theta_of(&self, t: usize) -> f64 {
        t as f64 * self.theta_resolution
    }
}

pub fn line_accumulator(mask: &BinaryMask, cfg: &HoughConfig) -> LineAccumulator {
    let (h, w) = mask.dims();
    let diag = ((h * h + w * w) as f64).sqrt();
    let n_theta = (PI / cfg.theta_resolution).round().max(1.0) as usize;
    let rho_offset = (diag / cfg.rho_resolution).ceil() as usize + 1;
    let n_rho = 2 * rho_offset + 1;
    let trig: Vec<(f64, f64)> = (0..n_theta)
        .map(|t| {
            let (s, c) = (t as f64 * cfg.theta_resolution).sin_cos();
            (c / cfg.rho_resolution, s / cfg.rho_resolution)
        })
        .collect();
    let mut votes = vec![0u32; n_theta * n_rho];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            for (t, &(c, s)) in trig.iter().enumerate() {
                let bin = round_half_up(x as f64 * c + y as f64 * s) + rho_offset as i64;
                votes[t * n_rho + bin as usize] += 1;
            }
        }
    }
    LineAccumulator {
        votes,
        n_theta,
        n_rho,
        rho_offset,
        rho_resolution: cfg.rho_resolution,
        theta_resolution: cfg.theta_resolution,
    }
}

impl LineAccumulator {
    /// Neighbors of `(t, r)`; theta wraps at pi with rho mirrored.
    fn neighbors(&self, t: usize, r: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (-1i64..=1).flat_map(move |dt| {
            (-1i64..=1).filter_map(move |dr| {
                if dt == 0 && dr == 0 {
                    return None;
                }
                let mut tt = t as i64 + dt;
                let mut rr = r as i64 + dr;
                if tt < 0 || tt >= self.n_theta as i64 {
                    tt = tt.rem_euclid(self.n_theta as i64);
                    rr = 2 * self.rho_offset as i64 - rr;
                }
                (0..self.n_rho as i64)
                    .contains(&rr)
                    .then_some((tt as usize, rr as usize))
            })
        })
    }
}

/// Detected lines sorted by votes descending.
pub fn hough_lines(mask: &BinaryMask, cfg: &HoughConfig) -> Result<Vec<LineParam>> {
    cfg.validate()?;
    if mask.is_empty_mask() {
        return Ok(Vec::new());
    }
    let (h, w) = mask.dims();
    let threshold = cfg
        .vote_threshold
        .unwrap_or_else(|| ((h.min(w) as f64) * 0.5).ceil().max(1.0) as u32);
    let acc = line_accumulator(mask, cfg);

    let mut candidates: Vec<(u32, usize, usize)> = Vec::new();
    for t in 0..acc.n_theta {
        for r in 0..acc.n_rho {
            let v = acc.get(t, r);
            if v >= threshold && acc.neighbors(t, r).all(|(nt, nr)| acc.get(nt, nr) <= v) {
                candidates.push((v, t, r));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut taken: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut lines = Vec::new();
    for (v, t, r) in candidates {
        if acc.neighbors(t, r).any(|n| taken.contains(&n)) {
            continue;
        }
        let line = LineParam {
            rho: acc.rho_of(r),
            theta: acc.theta_of(t),
            votes: v,
        };
        if support(mask, &line_pixels(&line, h, w)) < cfg.min_support {
            continue;
        }
        taken.insert((t, r));
        lines.push(line);
    }
    Ok(lines)
}

/// Detected circles sorted by votes descending.
pub fn hough_circles(mask: &BinaryMask, cfg: &HoughConfig) -> Result<Vec<CircleParam>> {
    cfg.validate()?;
    if mask.is_empty_mask() {
        return Ok(Vec::new());
    }
    let (h, w) = mask.dims();
    let (r_lo, r_hi) = cfg.radii(h, w);
    let radii: Vec<usize> = (r_lo..=r_hi).collect();
    let offsets: Vec<Vec<(i64, i64)>> = radii.iter().map(|&r| circle_offsets(r)).collect();
    let plane = h * w;
    let mut acc = vec![0u32; radii.len() * plane];

    let points: Vec<(i64, i64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| mask.get(y, x))
        .map(|(y, x)| (y as i64, x as i64))
        .collect();
    for (ri, offs) in offsets.iter().enumerate() {
        let layer = &mut acc[ri * plane..(ri + 1) * plane];
        for &(py, px) in &points {
            for &(dy, dx) in offs {
                let (cy, cx) = (py - dy, px - dx);
                if cy >= 0 && cx >= 0 && (cy as usize) < h && (cx as usize) < w {
                    layer[cy as usize * w + cx as usize] += 1;
                }
            }
        }
    }

    let at = |ri: usize, y: usize, x: usize| acc[ri * plane + y * w + x];
    let neighbors = |ri: usize, y: usize, x: usize| {
        let mut out = Vec::with_capacity(26);
        for dr in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dr == 0 && dy == 0 && dx == 0 {
                        continue;
                    }
                    let (nr, ny, nx) = (ri as i64 + dr, y as i64 + dy, x as i64 + dx);
                    if nr >= 0 && ny >= 0 && nx >= 0 && (nr as usize) < radii.len() && (ny as usize) < h && (nx as usize) < w {
                        out.push((nr as usize, ny as usize, nx as usize));
                    }
                }
            }
        }
        out
    };

    let mut candidates: Vec<(u32, usize, usize, usize)> = Vec::new();
    for (ri, offs) in offsets.iter().enumerate() {
        let threshold = cfg
            .vote_threshold
            .unwrap_or_else(|| (offs.len() as f64 * 0.5).ceil() as u32);
        for y in 0..h {
            for x in 0..w {
                let v = at(ri, y, x);
                if v >= threshold && neighbors(ri, y, x).into_iter().all(|(a, b, c)| at(a, b, c) <= v) {
                    candidates.push((v, ri, y, x));
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });

    let mut taken: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    let mut circles = Vec::new();
    for (v, ri, y, x) in candidates {
        if neighbors(ri, y, x).into_iter().any(|n| taken.contains(&n)) {
            continue;
        }
        let circle = CircleParam {
            cx: x as f64,
            cy: y as f64,
            r: radii[ri] as f64,
            votes: v,
        };
        if support(mask, &circle_pixels(&circle, h, w)) < cfg.min_support {
            continue;
        }
        taken.insert((ri, y, x));
        circles.push(circle);
    }
    Ok(circles)
}

/// 1-pixel rasterization of the primitives.
pub fn rasterize_primitives(h: usize, w: usize, lines: &[LineParam], circles: &[CircleParam]) -> BinaryMask {
    let mut mask = BinaryMask::zeros(h, w);
    for line in lines {
        for (y, x) in line_pixels(line, h, w) {
            mask.set(y, x, true);
        }
    }
    for circle in circles {
        for (y, x) in circle_pixels(circle, h, w) {
            mask.set(y, x, true);
        }
    }
    mask
}

/// Copy of `img` with the primitives drawn at intensity 1.0.
pub fn draw_primitives(img: &GrayImage, lines: &[LineParam], circles: &[CircleParam]) -> GrayImage {
    let (h, w) = img.dims();
    let raster = rasterize_primitives(h, w, lines, circles);
    let mut out = img.clone();
    for (v, &on) in out.data_mut().iter_mut().zip(raster.data()) {
        if on {
            *v = 1.0;
        }
    }
    out
}

/// Everything the broken-line prior computes, for inspection.
#[derive(Clone, Debug)]
pub struct BrokenPriorMaps {
    pub metal: BinaryMask,
    pub lines: Vec<LineParam>,
    pub circles: Vec<CircleParam>,
    /// Input with the reconstructed lattice drawn on it.
    pub drawn: GrayImage,
    /// Reconstructed lattice pixels not backed by observed metal.
    pub missing: BinaryMask,
    pub prior: BinaryMask,
}

pub fn broken_line_maps(img: &GrayImage, mesh: MeshType, cfg: &HoughConfig) -> Result<BrokenPriorMaps> {
    cfg.validate()?;
    let (h, w) = img.dims();
    let metal = binarize(img, otsu_threshold(img)?, Polarity::Above);
    let (lines, circles) = match mesh {
        MeshType::Square => (hough_lines(&metal, cfg)?, Vec::new()),
        MeshType::Circular => (Vec::new(), hough_circles(&metal, cfg)?),
    };
    let drawn = draw_primitives(img, &lines, &circles);
    let lattice = rasterize_primitives(h, w, &lines, &circles);
    let missing = lattice.and_not(&metal)?;
    let prior = dilate(&missing, cfg.dilate_radius);
    Ok(BrokenPriorMaps {
        metal,
        lines,
        circles,
        drawn,
        missing,
        prior,
    })
}

/// Set pixels mark where the Hough-reconstructed lattice lacks observed metal.
pub fn broken_line_prior(img: &GrayImage, mesh: MeshType, cfg: &HoughConfig) -> Result<BinaryMask> {
    broken_line_maps(img, mesh, cfg).map(|m| m.prior)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(cfg: &HoughConfig) -> (f64, f64) {
        (cfg.rho_resolution, cfg.theta_resolution)
    }

    fn find_line(lines: &[LineParam], rho: f64, theta: f64, cfg: &HoughConfig) -> Option<LineParam> {
        let (dr, dt) = cell(cfg);
        lines.iter().copied().find(|l| {
            let direct = (l.rho - rho).abs() <= dr && (l.theta - theta).abs() <= dt;
            let wrapped = (l.rho + rho).abs() <= dr && (PI - (l.theta - theta).abs()).abs() <= dt;
            direct || wrapped
        })
    }

    fn test_cfg() -> HoughConfig {
        HoughConfig {
            vote_threshold: Some(10),
            ..Default::default()
        }
    }

    #[test]
    fn vertical_and_horizontal_lines() {
        let cfg = test_cfg();
        let v = BinaryMask::from_fn(32, 32, |_, x| x == 10);
        let lines = hough_lines(&v, &cfg).unwrap();
        let l = find_line(&lines, 10.0, 0.0, &cfg).expect("vertical line");
        assert_eq!(l.votes, 32);

        let hmask = BinaryMask::from_fn(32, 32, |y, _| y == 7);
        let lines = hough_lines(&hmask, &cfg).unwrap();
        assert!(find_line(&lines, 7.0, PI / 2.0, &cfg).is_some());
    }

    /// Recounts votes for a single (rho, theta) bin straight from the definition.
    fn recount(mask: &BinaryMask, rho: f64, theta: f64) -> u32 {
        let (s, c) = theta.sin_cos();
        let mut n = 0;
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(y, x) && ((x as f64 * c + y as f64 * s) + 0.5).floor() == rho {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn parallel_lines_votes_equal_length() {
        let cfg = test_cfg();
        let mask = BinaryMask::from_fn(32, 32, |_, x| x == 5 || x == 20);
        let lines = hough_lines(&mask, &cfg).unwrap();
        for x in [5.0, 20.0] {
            let l = find_line(&lines, x, 0.0, &cfg).expect("line");
            assert_eq!(l.votes, 32);
            assert_eq!(recount(&mask, x, 0.0), 32);
        }
    }

    #[test]
    fn digital_line_votes_equal_pixel_count() {
        let cfg = test_cfg();
        for (rho, deg) in [(12.0, 30.0), (20.0, 60.0), (-5.0, 120.0), (15.0, 45.0)] {
            let theta = deg * PI / 180.0;
            let line = LineParam { rho, theta, votes: 0 };
            let px = line_pixels(&line, 40, 40);
            let mask = rasterize_primitives(40, 40, &[line], &[]);
            let acc = line_accumulator(&mask, &cfg);
            let t = (theta / cfg.theta_resolution).round() as usize;
            let best = (0..acc.n_rho).map(|r| acc.get(t, r)).max().unwrap();
            assert!(best as usize <= px.len());
            assert!(best as f64 >= 0.8 * px.len() as f64, "{deg}: {best} of {}", px.len());
        }
    }

    #[test]
    fn empty_mask_yields_nothing() {
        let m = BinaryMask::zeros(16, 16);
        assert!(hough_lines(&m, &test_cfg()).unwrap().is_empty());
        assert!(hough_circles(&m, &test_cfg()).unwrap().is_empty());
    }

    #[test]
    fn circle_recovered() {
        let c = CircleParam { cx: 16.0, cy: 16.0, r: 8.0, votes: 0 };
        let mask = rasterize_primitives(32, 32, &[], &[c]);
        let cfg = HoughConfig {
            radius_range: Some((4, 12)),
            ..Default::default()
        };
        let found = hough_circles(&mask, &cfg).unwrap();
        let best = found[0];
        assert!((best.cx - 16.0).abs() <= 1.0 && (best.cy - 16.0).abs() <= 1.0 && (best.r - 8.0).abs() <= 1.0);
        assert_eq!(best.votes as usize, circle_offsets(8).len());

        let narrow = HoughConfig {
            radius_range: Some((3, 5)),
            ..Default::default()
        };
        let found = hough_circles(&mask, &narrow).unwrap();
        assert!(found.iter().all(|c| (c.r - 8.0).abs() > 1.0));
    }

    #[test]
    fn midpoint_offsets_are_symmetric() {
        for r in 1..10 {
            let offs = circle_offsets(r);
            for &(dy, dx) in &offs {
                assert!(offs.contains(&(-dy, dx)) && offs.contains(&(dx, dy)));
                let d = ((dy * dy + dx * dx) as f64).sqrt();
                assert!((d - r as f64).abs() <= 0.75, "r={r} ({dy},{dx})");
            }
        }
    }

    #[test]
    fn draw_line_column() {
        let img = draw_primitives(&GrayImage::zeros(8, 8), &[LineParam { rho: 3.0, theta: 0.0, votes: 0 }], &[]);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(img.get(y, x), if x == 3 { 1.0 } else { 0.0 });
            }
        }
        let base = GrayImage::from_fn(5, 5, |y, x| (y * 5 + x) as f64 / 30.0);
        assert_eq!(draw_primitives(&base, &[], &[]), base);
    }

    #[test]
    fn drawing_is_additive() {
        let line = LineParam { rho: 2.0, theta: PI / 2.0, votes: 0 };
        let circle = CircleParam { cx: 10.0, cy: 10.0, r: 4.0, votes: 0 };
        let z = GrayImage::zeros(20, 20);
        let both = draw_primitives(&z, &[line], &[circle]);
        let a = draw_primitives(&z, &[line], &[]);
        let b = draw_primitives(&z, &[], &[circle]);
        for i in 0..400 {
            assert_eq!(both.data()[i], a.data()[i].max(b.data()[i]));
        }
    }

    fn rotate90(mask: &BinaryMask) -> BinaryMask {
        // x' = y, y' = (w - 1) - x
        let (h, w) = mask.dims();
        BinaryMask::from_fn(w, h, |yp, xp| mask.get(xp, w - 1 - yp))
    }

    #[test]
    fn rotation_consistency() {
        let cfg = test_cfg();
        let (h, w) = (40, 48);
        for (rho, deg) in [(10.0, 0.0), (20.0, 30.0), (25.0, 90.0), (-10.0, 135.0), (18.0, 60.0)] {
            let theta: f64 = deg * PI / 180.0;
            let mask = rasterize_primitives(h, w, &[LineParam { rho, theta, votes: 0 }], &[]);
            let before = hough_lines(&mask, &cfg).unwrap()[0];
            let after = hough_lines(&rotate90(&mask), &cfg).unwrap();
            let mut t2 = before.theta - PI / 2.0;
            let mut r2 = before.rho - (w as f64 - 1.0) * before.theta.cos();
            if t2 < 0.0 {
                t2 += PI;
                r2 = -r2;
            }
            assert!(find_line(&after, r2, t2, &cfg).is_some(), "deg {deg}: expected ({r2}, {t2}) in {:?}", &after[..after.len().min(3)]);
        }
    }

    #[test]
    fn config_validation() {
        assert!(HoughConfig { rho_resolution: 0.0, ..Default::default() }.validate().is_err());
        assert!(HoughConfig { vote_threshold: Some(0), ..Default::default() }.validate().is_err());
        assert!(HoughConfig { radius_range: Some((5, 4)), ..Default::default() }.validate().is_err());
    }
}
