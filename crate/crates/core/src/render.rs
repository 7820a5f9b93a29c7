//! Deterministic rasterization of actions onto RGB images.
//!
//! Normalized coordinates map linearly onto pixels: `px = x * width / 1000`,
//! clamped to the last column (rows likewise). Marks are opaque with no
//! anti-aliasing, so identical inputs always produce identical bytes.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use sha2::{Digest, Sha256};

use crate::trajectory::Action;

pub const RED: [u8; 3] = [255, 0, 0];
pub const WHITE: [u8; 3] = [255, 255, 255];

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("canvas must be non-empty, got {width}x{height}")]
    EmptyCanvas { width: u32, height: u32 },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("image encoding failed: {0}")]
    Encode(#[from] image::ImageError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Stroke color and width for drawn marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrokeStyle {
    pub color: [u8; 3],
    pub width: u32,
}

impl StrokeStyle {
    /// Opaque red, `max(2, round(3 * min(w, h) / 1000))` pixels wide.
    pub fn for_canvas(width: u32, height: u32) -> Self {
        let w = (3.0 * f64::from(width.min(height)) / 1000.0).round() as u32;
        StrokeStyle {
            color: RED,
            width: w.max(2),
        }
    }
}

/// 8-bit RGB pixel grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    inner: RgbImage,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, background: [u8; 3]) -> Result<Self, RenderError> {
        if width == 0 || height == 0 {
            return Err(RenderError::EmptyCanvas { width, height });
        }
        Ok(RasterImage {
            inner: RgbImage::from_pixel(width, height, Rgb(background)),
        })
    }

    pub fn width(&self) -> u32 {
        self.inner.width()
    }

    pub fn height(&self) -> u32 {
        self.inner.height()
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        self.inner.get_pixel(x, y).0
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, color: [u8; 3]) {
        if x < self.width() && y < self.height() {
            self.inner.put_pixel(x, y, Rgb(color));
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.inner.as_raw()
    }

    /// Fill an axis-aligned pixel rectangle `[x0, x1) x [y0, y1)`.
    pub fn fill_rect(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, color: [u8; 3]) {
        for y in y0..y1.min(self.height()) {
            for x in x0..x1.min(self.width()) {
                self.inner.put_pixel(x, y, Rgb(color));
            }
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        let mut buf = Cursor::new(Vec::new());
        self.inner.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RenderError> {
        let bytes = self.to_png()?;
        std::fs::write(path, bytes).map_err(|source| RenderError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Hex SHA-256 of the raw pixel bytes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width().to_le_bytes());
        h.update(self.height().to_le_bytes());
        h.update(self.as_bytes());
        hex::encode(h.finalize())
    }
}

fn to_px(v: u16, size: u32) -> f64 {
    let p = f64::from(v) * f64::from(size) / 1000.0;
    p.min(f64::from(size - 1))
}

/// Draw `action` onto a copy of `img`.
pub fn render(
    img: &RasterImage,
    action: &Action,
    style: &StrokeStyle,
) -> Result<RasterImage, RenderError> {
    action
        .validate()
        .map_err(|e| RenderError::InvalidAction(e.to_string()))?;
    let mut out = img.clone();
    draw(&mut out, action, style);
    Ok(out)
}

/// Draw `action` in place.
pub fn draw(img: &mut RasterImage, action: &Action, style: &StrokeStyle) {
    let (w, h) = (img.width(), img.height());
    let half = f64::from(style.width) / 2.0;
    match action {
        Action::Point { x, y } => {
            let radius = f64::from(style.width) * 1.5;
            fill_disk(img, to_px(*x, w), to_px(*y, h), radius, style.color);
        }
        Action::Line { x1, y1, x2, y2 } => {
            let (ax, ay) = (to_px(*x1, w), to_px(*y1, h));
            let (bx, by) = (to_px(*x2, w), to_px(*y2, h));
            stroke_segment(img, ax, ay, bx, by, half, style.color);
        }
        Action::Rectangle { x1, y1, x2, y2 } => {
            let (ax, ay) = (to_px(*x1, w), to_px(*y1, h));
            let (bx, by) = (to_px(*x2, w), to_px(*y2, h));
            stroke_segment(img, ax, ay, bx, ay, half, style.color);
            stroke_segment(img, bx, ay, bx, by, half, style.color);
            stroke_segment(img, bx, by, ax, by, half, style.color);
            stroke_segment(img, ax, by, ax, ay, half, style.color);
        }
        Action::Circle { cx, cy, r } => {
            let rx = f64::from(*r) * f64::from(w) / 1000.0;
            let ry = f64::from(*r) * f64::from(h) / 1000.0;
            stroke_ellipse(img, to_px(*cx, w), to_px(*cy, h), rx, ry, half, style.color);
        }
        Action::Text { x, y, content } => {
            let scale = (style.width / 2).max(1);
            draw_text(
                img,
                to_px(*x, w).round() as i64,
                to_px(*y, h).round() as i64,
                content,
                scale,
                style.color,
            );
        }
    }
}

fn pixel_range(lo: f64, hi: f64, size: u32) -> std::ops::Range<u32> {
    let a = lo.floor().max(0.0) as u32;
    let b = (hi.ceil() + 1.0).clamp(0.0, f64::from(size)) as u32;
    a.min(size)..b
}

fn fill_disk(img: &mut RasterImage, cx: f64, cy: f64, radius: f64, color: [u8; 3]) {
    let r2 = radius * radius;
    for py in pixel_range(cy - radius, cy + radius, img.height()) {
        for px in pixel_range(cx - radius, cx + radius, img.width()) {
            let (dx, dy) = (f64::from(px) - cx, f64::from(py) - cy);
            if dx * dx + dy * dy <= r2 {
                img.set_pixel(px, py, color);
            }
        }
    }
}

/// Paint every pixel whose center lies within `half` of the segment.
fn stroke_segment(
    img: &mut RasterImage,
    ax: f64,
    ay: f64,
    bx: f64,
    by: f64,
    half: f64,
    color: [u8; 3],
) {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let h2 = half * half;
    for py in pixel_range(ay.min(by) - half, ay.max(by) + half, img.height()) {
        for px in pixel_range(ax.min(bx) - half, ax.max(bx) + half, img.width()) {
            let (qx, qy) = (f64::from(px) - ax, f64::from(py) - ay);
            let t = if len2 > 0.0 {
                ((qx * dx + qy * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (ex, ey) = (qx - t * dx, qy - t * dy);
            if ex * ex + ey * ey <= h2 {
                img.set_pixel(px, py, color);
            }
        }
    }
}

fn stroke_ellipse(
    img: &mut RasterImage,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    half: f64,
    color: [u8; 3],
) {
    let rmin = rx.min(ry).max(f64::MIN_POSITIVE);
    for py in pixel_range(cy - ry - half, cy + ry + half, img.height()) {
        for px in pixel_range(cx - rx - half, cx + rx + half, img.width()) {
            let nx = (f64::from(px) - cx) / rx.max(f64::MIN_POSITIVE);
            let ny = (f64::from(py) - cy) / ry.max(f64::MIN_POSITIVE);
            let rho = (nx * nx + ny * ny).sqrt();
            if ((rho - 1.0) * rmin).abs() <= half {
                img.set_pixel(px, py, color);
            }
        }
    }
}

/// 3x5 glyphs, one row per 3 bits (MSB = leftmost), rows top to bottom.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [7, 4, 4, 4, 7],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [7, 4, 5, 5, 7],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 7],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [7, 5, 5, 5, 7],
        'P' => [7, 5, 7, 4, 4],
        'Q' => [7, 5, 5, 7, 1],
        'R' => [7, 5, 6, 5, 5],
        'S' => [7, 4, 7, 1, 7],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        '.' => [0, 0, 0, 0, 2],
        ',' => [0, 0, 0, 2, 4],
        '-' => [0, 0, 7, 0, 0],
        '+' => [0, 2, 7, 2, 0],
        '%' => [5, 1, 2, 4, 5],
        ':' => [0, 2, 0, 2, 0],
        ' ' => [0, 0, 0, 0, 0],
        _ => [7, 7, 7, 7, 7],
    }
}

fn draw_text(img: &mut RasterImage, x: i64, y: i64, text: &str, scale: u32, color: [u8; 3]) {
    let s = i64::from(scale);
    for (i, c) in text.chars().enumerate() {
        let ox = x + i as i64 * 4 * s;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) == 0 {
                    continue;
                }
                for sy in 0..s {
                    for sx in 0..s {
                        let px = ox + col * s + sx;
                        let py = y + row as i64 * s + sy;
                        if px >= 0 && py >= 0 {
                            img.set_pixel(px as u32, py as u32, color);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stroke_width_rule() {
        assert_eq!(StrokeStyle::for_canvas(1000, 1000).width, 3);
        assert_eq!(StrokeStyle::for_canvas(256, 256).width, 2);
        assert_eq!(StrokeStyle::for_canvas(2000, 1500).width, 5);
    }

    #[test]
    fn empty_canvas_rejected() {
        assert!(matches!(
            RasterImage::new(0, 10, WHITE),
            Err(RenderError::EmptyCanvas { .. })
        ));
    }

    #[test]
    fn point_draws_red_disk_at_center() {
        let img = RasterImage::new(1000, 1000, WHITE).unwrap();
        let style = StrokeStyle::for_canvas(1000, 1000);
        let out = render(&img, &Action::Point { x: 500, y: 500 }, &style).unwrap();
        assert_eq!(out.pixel(500, 500), RED);
        assert_eq!(out.pixel(503, 500), RED);
        assert_eq!(out.pixel(510, 500), WHITE);
        // input untouched
        assert_eq!(img.pixel(500, 500), WHITE);
    }

    #[test]
    fn rendering_is_deterministic() {
        let img = RasterImage::new(320, 200, WHITE).unwrap();
        let style = StrokeStyle::for_canvas(320, 200);
        let actions = [
            Action::Circle {
                cx: 400,
                cy: 600,
                r: 150,
            },
            Action::Rectangle {
                x1: 10,
                y1: 20,
                x2: 900,
                y2: 950,
            },
            Action::Text {
                x: 100,
                y: 100,
                content: "max 42".into(),
            },
        ];
        for a in &actions {
            let one = render(&img, a, &style).unwrap();
            let two = render(&img, a, &style).unwrap();
            assert_eq!(one.to_png().unwrap(), two.to_png().unwrap());
            assert_ne!(one, img, "{a:?} drew nothing");
        }
    }

    #[test]
    fn rectangle_outline_leaves_interior() {
        let img = RasterImage::new(100, 100, WHITE).unwrap();
        let style = StrokeStyle {
            color: RED,
            width: 2,
        };
        let out = render(
            &img,
            &Action::Rectangle {
                x1: 100,
                y1: 100,
                x2: 800,
                y2: 800,
            },
            &style,
        )
        .unwrap();
        assert_eq!(out.pixel(10, 40), RED);
        assert_eq!(out.pixel(45, 45), WHITE);
    }

    #[test]
    fn invalid_action_rejected() {
        let img = RasterImage::new(10, 10, WHITE).unwrap();
        let style = StrokeStyle::for_canvas(10, 10);
        assert!(render(&img, &Action::Circle { cx: 5, cy: 5, r: 0 }, &style).is_err());
    }
}
