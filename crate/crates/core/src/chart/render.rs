use serde::{Deserialize, Serialize};

use super::series::moving_average;
use super::{ChartError, Feature, GrayImage};

pub const BACKGROUND: u8 = 255;
pub const CLOSE_INK: u8 = 0;
const AVERAGE_INK: u8 = 96;
const VOLUME_INK: u8 = 150;
const FILL_INK: u8 = 200;
const MARGIN: usize = 2;
const MA_WINDOW: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Style {
    LineThin,
    LineThick,
    FilledArea,
}

impl Style {
    pub const ALL: [Style; 3] = [Style::LineThin, Style::LineThick, Style::FilledArea];

    fn half_thickness(self) -> i64 {
        match self {
            Style::LineThick => 1,
            Style::LineThin | Style::FilledArea => 0,
        }
    }
}

/// Close-only chart.
pub fn render_chart(
    window: &[f64],
    style: Style,
    height: usize,
    width: usize,
) -> Result<GrayImage, ChartError> {
    render_chart_with(window, style, &[Feature::Close], height, width)
}

/// Dark-on-white line chart of `window`, min–max scaled into the plot area
/// with a two-pixel margin. A moving average is overlaid in mid gray and
/// volume, derived from absolute log returns, is drawn as bars in a bottom band.
pub fn render_chart_with(
    window: &[f64],
    style: Style,
    features: &[Feature],
    height: usize,
    width: usize,
) -> Result<GrayImage, ChartError> {
    if window.is_empty() {
        return Err(ChartError::Render("empty window".into()));
    }
    if let Some(i) = window.iter().position(|v| !v.is_finite()) {
        return Err(ChartError::Render(format!("non-finite value at index {i}")));
    }
    let with_volume = features.contains(&Feature::Volume);
    let band = if with_volume { (height / 8).max(2) } else { 0 };
    if height < 2 * MARGIN + 1 + band + usize::from(with_volume) || width < 2 {
        return Err(ChartError::Render(format!(
            "image {height}x{width} too small"
        )));
    }
    let top = MARGIN;
    let bottom = height - 1 - MARGIN - if with_volume { band + 1 } else { 0 };

    let owned;
    let series: &[f64] = if window.len() == 1 {
        owned = [window[0], window[0]];
        &owned
    } else {
        window
    };
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let flat = hi - lo <= f64::EPSILON * hi.abs().max(1.0);
    let mid = ((top + bottom) / 2) as f64;
    let to_y = |v: f64| {
        if flat {
            mid
        } else {
            bottom as f64 - (v - lo) / (hi - lo) * (bottom - top) as f64
        }
    };
    let n = series.len();
    let to_x = |i: usize| i as f64 * (width - 1) as f64 / (n - 1) as f64;

    let mut img = GrayImage::new(height, width, BACKGROUND);
    let mut col_top = vec![usize::MAX; width];

    if features.contains(&Feature::MovingAverage) {
        let ma = moving_average(series, MA_WINDOW);
        let pts: Vec<(f64, f64)> = ma
            .iter()
            .enumerate()
            .map(|(i, &v)| (to_x(i), to_y(v)))
            .collect();
        draw_polyline(&mut img, &pts, 0, AVERAGE_INK, top, bottom, None);
    }

    let pts: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .map(|(i, &v)| (to_x(i), to_y(v)))
        .collect();
    draw_polyline(
        &mut img,
        &pts,
        style.half_thickness(),
        CLOSE_INK,
        top,
        bottom,
        Some(&mut col_top),
    );

    if style == Style::FilledArea {
        for (c, &t) in col_top.iter().enumerate() {
            if t == usize::MAX {
                continue;
            }
            for r in t + 1..=bottom {
                img.darken(r, c, FILL_INK);
            }
        }
    }

    if with_volume {
        let vols: Vec<f64> = series
            .windows(2)
            .map(|w| (w[1].ln() - w[0].ln()).abs())
            .collect();
        let vmax = vols.iter().copied().fold(0.0, f64::max);
        let band_bottom = height - 1 - MARGIN;
        let mut per_col = vec![0.0f64; width];
        for (i, &v) in vols.iter().enumerate() {
            let c = to_x(i + 1).round() as usize;
            per_col[c.min(width - 1)] = per_col[c.min(width - 1)].max(v);
        }
        for (c, &v) in per_col.iter().enumerate() {
            let rows = if vmax > 0.0 {
                ((v / vmax) * band as f64).round() as usize
            } else {
                0
            };
            for r in 0..rows.min(band) {
                img.darken(band_bottom - r, c, VOLUME_INK);
            }
        }
    }
    Ok(img)
}

fn draw_polyline(
    img: &mut GrayImage,
    pts: &[(f64, f64)],
    half: i64,
    ink: u8,
    top: usize,
    bottom: usize,
    mut col_top: Option<&mut Vec<usize>>,
) {
    let width = img.width() as i64;
    let mut plot = |x: f64, y: f64| {
        let c = (x.round() as i64).clamp(0, width - 1) as usize;
        let r = y.round() as i64;
        for dr in -half..=half {
            let rr = (r + dr).clamp(top as i64, bottom as i64) as usize;
            img.darken(rr, c, ink);
            if let Some(ct) = col_top.as_deref_mut() {
                ct[c] = ct[c].min(rr);
            }
        }
    };
    for seg in pts.windows(2) {
        let (x0, y0) = seg[0];
        let (x1, y1) = seg[1];
        let steps = (((x1 - x0).abs().max((y1 - y0).abs())) * 2.0)
            .ceil()
            .max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            plot(x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        }
    }
}
