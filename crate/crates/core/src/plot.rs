//! Minimal PNG charts: line charts, bar charts and heatmaps drawn directly
//! into an RGB buffer. Charts carry no text; companion CSV/JSON files hold
//! the numbers.

use std::path::Path;

use image::{Rgb, RgbImage};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: u32 = 40;
const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

/// Distinct series colors, cycled.
pub const PALETTE: [[u8; 3]; 4] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189]];

pub type PlotResult = Result<(), image::ImageError>;

struct Frame {
    img: RgbImage,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn new(x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BG);
        for k in 0..=4 {
            let y = MARGIN + k * (HEIGHT - 2 * MARGIN) / 4;
            for x in MARGIN..WIDTH - MARGIN {
                img.put_pixel(x, y, GRID);
            }
        }
        for x in MARGIN..=WIDTH - MARGIN {
            img.put_pixel(x, HEIGHT - MARGIN, AXIS);
        }
        for y in MARGIN..=HEIGHT - MARGIN {
            img.put_pixel(MARGIN, y, AXIS);
        }
        Frame { img, x_range: widen(x_range), y_range: widen(y_range) }
    }

    fn to_px(&self, x: f64, y: f64) -> (i64, i64) {
        let w = (WIDTH - 2 * MARGIN) as f64;
        let h = (HEIGHT - 2 * MARGIN) as f64;
        let fx = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        let fy = (y - self.y_range.0) / (self.y_range.1 - self.y_range.0);
        ((MARGIN as f64 + fx * w).round() as i64, ((HEIGHT - MARGIN) as f64 - fy * h).round() as i64)
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < WIDTH && (y as u32) < HEIGHT {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            self.put(x, y + 1, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn rect(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        for x in x0.min(x1)..=x0.max(x1) {
            for y in y0.min(y1)..=y0.max(y1) {
                self.put(x, y, c);
            }
        }
    }
}

fn widen((lo, hi): (f64, f64)) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// One polyline per series of `(x, y)` points; non-finite points are skipped.
pub fn line_chart(series: &[Vec<(f64, f64)>], path: &Path) -> PlotResult {
    let xs = range(series.iter().flatten().map(|p| p.0));
    let ys = range(series.iter().flatten().map(|p| p.1));
    let mut f = Frame::new(xs, (ys.0.min(0.0), ys.1));
    for (i, s) in series.iter().enumerate() {
        let c = Rgb(PALETTE[i % PALETTE.len()]);
        let pts: Vec<(i64, i64)> =
            s.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).map(|&(x, y)| f.to_px(x, y)).collect();
        for w in pts.windows(2) {
            f.line(w[0], w[1], c);
        }
        if let [only] = pts.as_slice() {
            f.rect((only.0 - 2, only.1 - 2), (only.0 + 2, only.1 + 2), c);
        }
    }
    f.img.save(path)
}

/// Vertical bars, one per value, on a zero baseline.
pub fn bar_chart(values: &[f64], path: &Path) -> PlotResult {
    let ys = range(values.iter().copied());
    let mut f = Frame::new((0.0, values.len().max(1) as f64), (ys.0.min(0.0), ys.1.max(0.0)));
    let c = Rgb(PALETTE[0]);
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let left = f.to_px(i as f64 + 0.15, 0.0);
        let right = f.to_px(i as f64 + 0.85, v);
        f.rect(left, right, c);
    }
    f.img.save(path)
}

/// Cells shaded from white (0) to dark blue (matrix maximum).
pub fn heatmap(matrix: &[Vec<f64>], path: &Path) -> PlotResult {
    let rows = matrix.len().max(1);
    let cols = matrix.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let max = matrix.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    let mut f = Frame::new((0.0, cols as f64), (0.0, rows as f64));
    for (r, row) in matrix.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
            let shade = |full: f64| (255.0 - t * (255.0 - full)).round() as u8;
            let color = Rgb([shade(8.0), shade(48.0), shade(107.0)]);
            // row 0 at the top
            let top = (rows - r) as f64;
            f.rect(f.to_px(c as f64, top - 1.0), f.to_px(c as f64 + 1.0, top), color);
        }
    }
    f.img.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_written_as_png() {
        let dir = tempfile::tempdir().unwrap();
        let line = dir.path().join("l.png");
        line_chart(&[vec![(1.0, 3.0), (2.0, 1.0), (3.0, 0.5)], vec![(1.0, f64::NAN)]], &line).unwrap();
        bar_chart(&[0.2, 0.9, f64::NAN], &dir.path().join("b.png")).unwrap();
        heatmap(&[vec![1.0, 0.0], vec![3.0, 2.0]], &dir.path().join("h.png")).unwrap();
        let img = image::open(&line).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (WIDTH, HEIGHT));
        assert!(img.pixels().any(|p| *p == Rgb(PALETTE[0])));
    }

    #[test]
    fn degenerate_inputs_do_not_panic() {
        let dir = tempfile::tempdir().unwrap();
        line_chart(&[], &dir.path().join("e.png")).unwrap();
        bar_chart(&[], &dir.path().join("e2.png")).unwrap();
        heatmap(&[], &dir.path().join("e3.png")).unwrap();
    }
}
