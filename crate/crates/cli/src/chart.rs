//! PNG line charts and confusion-matrix heatmaps drawn pixel by pixel.

use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use xraycnn_core::dataset::CLASS_NAMES;
use xraycnn_core::report::ConfusionMatrix;
use xraycnn_core::{Error, Result};

pub const CHART_WIDTH: u32 = 800;
pub const CHART_HEIGHT: u32 = 600;
pub const MARGIN_LEFT: u32 = 80;
pub const MARGIN_RIGHT: u32 = 30;
pub const MARGIN_TOP: u32 = 50;
pub const MARGIN_BOTTOM: u32 = 70;

pub const BLUE: Rgb<u8> = Rgb([31, 119, 180]);
pub const PINK: Rgb<u8> = Rgb([227, 84, 161]);
pub const SERIES_COLORS: [Rgb<u8>; 4] = [BLUE, PINK, Rgb([44, 160, 44]), Rgb([255, 127, 14])];

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

#[derive(Debug, Clone, PartialEq)]
pub struct ChartSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl ChartSeries {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self> {
        let s = ChartSeries {
            label: label.into(),
            points,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::invalid(format!("series {:?} needs at least 2 points", self.label)));
        }
        if self.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::invalid(format!("series {:?} has non-finite values", self.label)));
        }
        if self.points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid(format!("series {:?} x values must increase", self.label)));
        }
        Ok(())
    }
}

/// Data-to-pixel mapping of the plot area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotFrame {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl PlotFrame {
    /// Auto-scales to the data: x spans the data exactly, y gets 5% padding,
    /// and a flat series is centered in a unit-high window.
    pub fn fit(series: &[ChartSeries], width: u32, height: u32) -> Result<Self> {
        if width <= MARGIN_LEFT + MARGIN_RIGHT + 10 || height <= MARGIN_TOP + MARGIN_BOTTOM + 10 {
            return Err(Error::invalid(format!("chart size {width}x{height} too small")));
        }
        let pts = series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let (y0, y1) = if y1 > y0 {
            let pad = (y1 - y0) * 0.05;
            (y0 - pad, y1 + pad)
        } else {
            (y0 - 0.5, y1 + 0.5)
        };
        Ok(PlotFrame {
            left: MARGIN_LEFT,
            top: MARGIN_TOP,
            right: width - MARGIN_RIGHT - 1,
            bottom: height - MARGIN_BOTTOM - 1,
            x_range: (x0, x1),
            y_range: (y0, y1),
        })
    }

    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        let px = f64::from(self.left) + (x - x0) / (x1 - x0) * f64::from(self.right - self.left);
        let py = f64::from(self.bottom) - (y - y0) / (y1 - y0) * f64::from(self.bottom - self.top);
        (px, py)
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, c: Rgb<u8>) {
    for yy in y..y + h {
        for xx in x..x + w {
            put(img, xx, yy, c);
        }
    }
}

/// Bresenham line with a square brush of side `thickness`.
fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), thickness: i64, c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    let off = thickness / 2;
    loop {
        fill_rect(img, x - off, y - off, thickness, thickness, c);
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

/// 8×8 bitmap text, each font pixel drawn as a `scale`×`scale` block.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: i64, c: Rgb<u8>) {
    use font8x8::UnicodeFonts;
    for (i, ch) in text.chars().enumerate() {
        let glyph = font8x8::BASIC_FONTS.get(ch).or_else(|| font8x8::BASIC_FONTS.get('?'));
        let Some(glyph) = glyph else { continue };
        let gx = x + i as i64 * 8 * scale;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits >> col & 1 == 1 {
                    fill_rect(img, gx + col * scale, y + row as i64 * scale, scale, scale, c);
                }
            }
        }
    }
}

pub fn text_width(text: &str, scale: i64) -> i64 {
    text.chars().count() as i64 * 8 * scale
}

fn tick_label(v: f64, span: f64) -> String {
    if span >= 10.0 {
        format!("{v:.0}")
    } else if span >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

/// Renders the series on white with axes, grid, ticks, title and legend.
pub fn line_chart(series: &[ChartSeries], title: &str, width: u32, height: u32) -> Result<RgbImage> {
    if series.is_empty() {
        return Err(Error::invalid("a chart needs at least one series"));
    }
    for s in series {
        s.validate()?;
    }
    let frame = PlotFrame::fit(series, width, height)?;
    let mut img = RgbImage::from_pixel(width, height, WHITE);
    let (l, t, r, b) = (
        i64::from(frame.left),
        i64::from(frame.top),
        i64::from(frame.right),
        i64::from(frame.bottom),
    );

    const TICKS: usize = 5;
    let (y0, y1) = frame.y_range;
    for i in 0..=TICKS {
        let v = y0 + (y1 - y0) * i as f64 / TICKS as f64;
        let py = frame.to_pixel(frame.x_range.0, v).1.round() as i64;
        line(&mut img, (l, py), (r, py), 1, GRID);
        let label = tick_label(v, y1 - y0);
        draw_text(&mut img, l - 8 - text_width(&label, 1), py - 4, &label, 1, BLACK);
    }
    let (x0, x1) = frame.x_range;
    let step = ((x1 - x0) / 10.0).ceil().max(1.0);
    let mut v = x0;
    while v <= x1 + 1e-9 {
        let px = frame.to_pixel(v, y0).0.round() as i64;
        line(&mut img, (px, b), (px, b + 5), 1, BLACK);
        let label = tick_label(v, 10.0);
        draw_text(&mut img, px - text_width(&label, 1) / 2, b + 10, &label, 1, BLACK);
        v += step;
    }
    line(&mut img, (l, t), (l, b), 1, BLACK);
    line(&mut img, (l, b), (r, b), 1, BLACK);
    draw_text(&mut img, (l + r) / 2 - text_width("epoch", 1) / 2, b + 30, "epoch", 1, BLACK);
    draw_text(&mut img, (i64::from(width) - text_width(title, 2)) / 2, 14, title, 2, BLACK);

    for (i, s) in series.iter().enumerate() {
        let c = SERIES_COLORS[i % SERIES_COLORS.len()];
        let px: Vec<(i64, i64)> = s
            .points
            .iter()
            .map(|&(x, y)| {
                let (px, py) = frame.to_pixel(x, y);
                (px.round() as i64, py.round() as i64)
            })
            .collect();
        for w in px.windows(2) {
            line(&mut img, w[0], w[1], 2, c);
        }
        for &(x, y) in &px {
            fill_rect(&mut img, x - 2, y - 2, 5, 5, c);
        }
        let ly = t + 10 + i as i64 * 16;
        let lx = r - 150;
        line(&mut img, (lx, ly + 4), (lx + 24, ly + 4), 2, c);
        draw_text(&mut img, lx + 32, ly, &s.label, 1, BLACK);
    }
    Ok(img)
}

pub fn save_png(img: &RgbImage, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    img.save_with_format(out, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(out, io),
        other => Error::Image {
            path: out.to_path_buf(),
            source: other,
        },
    })
}

pub fn render_line_chart(series: &[ChartSeries], title: &str, out: impl AsRef<Path>, width: u32, height: u32) -> Result<()> {
    save_png(&line_chart(series, title, width, height)?, out)
}

pub const CELL: u32 = 120;
pub const HEATMAP_LEFT: u32 = 110;
pub const HEATMAP_TOP: u32 = 60;
pub const HEATMAP_WIDTH: u32 = HEATMAP_LEFT + 3 * CELL + 30;
pub const HEATMAP_HEIGHT: u32 = HEATMAP_TOP + 3 * CELL + 70;

/// Linear scale from white at 0 to dark blue at `max`.
pub fn heat_color(count: u64, max: u64) -> Rgb<u8> {
    let t = if max == 0 { 0.0 } else { count as f64 / max as f64 };
    let lo = [255.0, 255.0, 255.0];
    let hi = [8.0, 48.0, 107.0];
    Rgb(std::array::from_fn(|i| (lo[i] + (hi[i] - lo[i]) * t).round() as u8))
}

/// Top-left pixel of cell (row = true class, col = predicted class).
pub fn cell_origin(row: usize, col: usize) -> (u32, u32) {
    (HEATMAP_LEFT + col as u32 * CELL, HEATMAP_TOP + row as u32 * CELL)
}

pub fn heatmap(cm: &ConfusionMatrix) -> Result<RgbImage> {
    let mut img = RgbImage::from_pixel(HEATMAP_WIDTH, HEATMAP_HEIGHT, WHITE);
    let max = cm.max_count();
    for (row, counts) in cm.counts.iter().enumerate() {
        for (col, &n) in counts.iter().enumerate() {
            let (x, y) = cell_origin(row, col);
            let c = heat_color(n, max);
            fill_rect(&mut img, i64::from(x), i64::from(y), i64::from(CELL), i64::from(CELL), c);
            let ink = if max > 0 && n * 2 > max { WHITE } else { BLACK };
            let label = n.to_string();
            let cx = i64::from(x + CELL / 2) - text_width(&label, 2) / 2;
            draw_text(&mut img, cx, i64::from(y + CELL / 2) - 8, &label, 2, ink);
        }
    }
    for (i, name) in CLASS_NAMES.iter().enumerate() {
        let (x, y) = cell_origin(i, i);
        draw_text(&mut img, i64::from(x + CELL / 2) - text_width(name, 1) / 2, i64::from(HEATMAP_TOP + 3 * CELL + 8), name, 1, BLACK);
        draw_text(&mut img, i64::from(HEATMAP_LEFT) - 8 - text_width(name, 1), i64::from(y + CELL / 2) - 4, name, 1, BLACK);
    }
    let (l, t) = (i64::from(HEATMAP_LEFT), i64::from(HEATMAP_TOP));
    let grid = i64::from(3 * CELL);
    draw_text(&mut img, l + grid / 2 - text_width("Predicted", 1) / 2, t + grid + 30, "Predicted", 1, BLACK);
    draw_text(&mut img, 8, t - 20, "True", 1, BLACK);
    draw_text(&mut img, l, 16, "Confusion matrix", 2, BLACK);
    Ok(img)
}

pub fn render_heatmap(cm: &ConfusionMatrix, out: impl AsRef<Path>) -> Result<()> {
    save_png(&heatmap(cm)?, out)
}
