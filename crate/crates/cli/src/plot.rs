//! Deterministic raster line plots written as binary PPM.

use std::fmt::Write as _;

pub type Rgb = [u8; 3];

const WHITE: Rgb = [255, 255, 255];
const BLACK: Rgb = [0, 0, 0];
const GRID: Rgb = [225, 225, 225];

/// Series colours, cycled.
pub const PALETTE: [Rgb; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
];

/// 5×7 glyphs, one byte per row, bit 4 is the leftmost column. Lowercase
/// letters render as uppercase; unknown characters as a box.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        ' ' => [0; 7],
        '.' => [0, 0, 0, 0, 0, 0x0C, 0x0C],
        ',' => [0, 0, 0, 0, 0x0C, 0x04, 0x08],
        '-' => [0, 0, 0, 0x1F, 0, 0, 0],
        '_' => [0, 0, 0, 0, 0, 0, 0x1F],
        ':' => [0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '%' => [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '=' => [0, 0, 0x1F, 0, 0x1F, 0, 0],
        '+' => [0, 0x04, 0x04, 0x1F, 0x04, 0x04, 0],
        _ => [0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F],
    }
}

pub const GLYPH_W: usize = 6;

pub struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![WHITE; width * height],
        }
    }

    pub fn set(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = c;
        }
    }

    #[cfg(test)]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    /// Bresenham segment.
    pub fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
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

    pub fn text(&mut self, x: i64, y: i64, s: &str, c: Rgb) {
        for (i, ch) in s.chars().enumerate() {
            let g = glyph(ch);
            let ox = x + (i * GLYPH_W) as i64;
            for (row, bits) in g.iter().enumerate() {
                for col in 0..5 {
                    if bits & (0x10 >> col) != 0 {
                        self.set(ox + col, y + row as i64, c);
                    }
                }
            }
        }
    }

    /// Text rotated a quarter turn counter-clockwise, reading bottom to top.
    pub fn text_vertical(&mut self, x: i64, y_bottom: i64, s: &str, c: Rgb) {
        for (i, ch) in s.chars().enumerate() {
            let g = glyph(ch);
            let oy = y_bottom - (i * GLYPH_W) as i64;
            for (row, bits) in g.iter().enumerate() {
                for col in 0..5 {
                    if bits & (0x10 >> col) != 0 {
                        self.set(x + row as i64, oy - col, c);
                    }
                }
            }
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }
}

pub struct Series {
    pub name: String,
    /// `None` marks a missing value and breaks the line.
    pub points: Vec<Option<(f64, f64)>>,
}

pub struct LinePlot<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: &'a [Series],
}

const W: usize = 640;
const H: usize = 400;
const LEFT: i64 = 70;
const RIGHT: i64 = 160;
const TOP: i64 = 30;
const BOTTOM: i64 = 50;

/// Shortest decimal label for a tick value.
fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    };
    let v = if v.abs() < step * 1e-6 { 0.0 } else { v };
    let mut s = String::new();
    let _ = write!(s, "{v:.decimals$}");
    s
}

/// A "nice" tick step (1, 2 or 5 × 10^k) giving at most `target` intervals.
fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag)
}

fn bounds(series: &[Series]) -> Option<((f64, f64), (f64, f64))> {
    let pts = series.iter().flat_map(|s| s.points.iter().flatten());
    let mut b: Option<((f64, f64), (f64, f64))> = None;
    for &(x, y) in pts {
        b = Some(match b {
            None => ((x, x), (y, y)),
            Some(((x0, x1), (y0, y1))) => ((x0.min(x), x1.max(x)), (y0.min(y), y1.max(y))),
        });
    }
    b
}

fn widen((lo, hi): (f64, f64)) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

impl LinePlot<'_> {
    /// `None` when no series has a finite point.
    pub fn render(&self) -> Option<Canvas> {
        let (xr, yr) = bounds(self.series)?;
        let (x0, x1) = widen(xr);
        let (y0, y1) = widen(yr);
        let mut cv = Canvas::new(W, H);
        let (pw, ph) = (W as i64 - LEFT - RIGHT, H as i64 - TOP - BOTTOM);
        let px = |x: f64| LEFT + ((x - x0) / (x1 - x0) * pw as f64).round() as i64;
        let py = |y: f64| TOP + ph - ((y - y0) / (y1 - y0) * ph as f64).round() as i64;

        let ystep = nice_step(y1 - y0, 6);
        let mut k = (y0 / ystep).ceil();
        while k * ystep <= y1 + ystep * 1e-9 {
            let t = k * ystep;
            k += 1.0;
            let y = py(t);
            cv.line((LEFT, y), (LEFT + pw, y), GRID);
            let label = tick_label(t, ystep);
            cv.text(
                LEFT - 6 - (label.len() * GLYPH_W) as i64,
                y - 3,
                &label,
                BLACK,
            );
        }
        let xstep = nice_step(x1 - x0, 8);
        let mut k = (x0 / xstep).ceil();
        while k * xstep <= x1 + xstep * 1e-9 {
            let t = k * xstep;
            k += 1.0;
            let x = px(t);
            cv.line((x, TOP), (x, TOP + ph), GRID);
            let label = tick_label(t, xstep);
            cv.text(
                x - (label.len() * GLYPH_W / 2) as i64,
                TOP + ph + 6,
                &label,
                BLACK,
            );
        }
        cv.line((LEFT, TOP), (LEFT, TOP + ph), BLACK);
        cv.line((LEFT, TOP + ph), (LEFT + pw, TOP + ph), BLACK);

        for (i, s) in self.series.iter().enumerate() {
            let c = PALETTE[i % PALETTE.len()];
            let mut prev: Option<(i64, i64)> = None;
            for p in &s.points {
                match p {
                    Some((x, y)) => {
                        let cur = (px(*x), py(*y));
                        match prev {
                            Some(a) => cv.line(a, cur, c),
                            None => cv.set(cur.0, cur.1, c),
                        }
                        prev = Some(cur);
                    }
                    None => prev = None,
                }
            }
            let ly = TOP + 4 + 14 * i as i64;
            let lx = LEFT + pw + 10;
            cv.line((lx, ly + 3), (lx + 14, ly + 3), c);
            cv.line((lx, ly + 4), (lx + 14, ly + 4), c);
            let name: String = s.name.chars().take(22).collect();
            cv.text(lx + 18, ly, &name, BLACK);
        }

        let title_x = LEFT + (pw - (self.title.len() * GLYPH_W) as i64) / 2;
        cv.text(title_x, 10, self.title, BLACK);
        let xl_x = LEFT + (pw - (self.x_label.len() * GLYPH_W) as i64) / 2;
        cv.text(xl_x, H as i64 - 18, self.x_label, BLACK);
        let yl_y = TOP + (ph + (self.y_label.len() * GLYPH_W) as i64) / 2;
        cv.text_vertical(8, yl_y, self.y_label, BLACK);
        Some(cv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Series {
        Series {
            name: "ramp".into(),
            points: (0..n).map(|i| Some((i as f64, i as f64 * 0.5))).collect(),
        }
    }

    #[test]
    fn nice_steps() {
        assert_eq!(nice_step(1.0, 5), 0.2);
        assert_eq!(nice_step(100.0, 8), 20.0);
        assert_eq!(nice_step(7.0, 6), 2.0);
    }

    #[test]
    fn render_is_deterministic_and_draws_the_series() {
        let s = [ramp(100)];
        let plot = LinePlot {
            title: "t",
            x_label: "step",
            y_label: "value",
            series: &s,
        };
        let a = plot.render().unwrap().to_ppm();
        let b = plot.render().unwrap().to_ppm();
        assert_eq!(a, b);
        let cv = plot.render().unwrap();
        // the first point sits at the lower-left plot corner
        assert_eq!(
            cv.get(LEFT as usize, (H as i64 - BOTTOM) as usize),
            PALETTE[0]
        );
        assert!(a.starts_with(b"P6\n640 400\n255\n"));
        assert_eq!(a.len(), 15 + W * H * 3);
    }

    #[test]
    fn constant_and_single_point_series_render() {
        let s = [Series {
            name: "one".into(),
            points: vec![Some((3.0, 2.0))],
        }];
        let plot = LinePlot {
            title: "",
            x_label: "",
            y_label: "",
            series: &s,
        };
        assert!(plot.render().is_some());
        let empty = [Series {
            name: "none".into(),
            points: vec![None],
        }];
        let plot = LinePlot {
            series: &empty,
            ..plot
        };
        assert!(plot.render().is_none());
    }

    #[test]
    fn tick_labels_follow_the_step() {
        assert_eq!(tick_label(0.4, 0.2), "0.4");
        assert_eq!(tick_label(-0.0, 0.5), "0.0");
        assert_eq!(tick_label(200.0, 50.0), "200");
        assert_eq!(tick_label(-0.0, 5.0), "0");
    }
}
