//! Heat-map raster and vector export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lanelet::{point_in_polygon, PolygonMap};
use crate::occupancy::HeatMap;

/// Color stops from lightest (count 0) to darkest (max count). Every channel
/// is non-increasing along the ramp, so luminance falls monotonically.
const RAMP: [[f64; 3]; 3] = [[255.0, 247.0, 236.0], [252.0, 141.0, 89.0], [127.0, 0.0, 0.0]];
const BACKGROUND: Rgb<u8> = Rgb([200, 200, 200]);
const INK: Rgb<u8> = Rgb([0, 0, 0]);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderStyle {
    pub pixels_per_meter: f64,
    pub margin_m: f64,
    pub legend: bool,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            pixels_per_meter: 4.0,
            margin_m: 5.0,
            legend: true,
        }
    }
}

/// Color for a normalized occupancy in `[0, 1]`.
pub fn colormap(level: f64) -> Rgb<u8> {
    let t = level.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let k = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - k as f64;
    let mut c = [0u8; 3];
    for i in 0..3 {
        c[i] = (RAMP[k][i] + (RAMP[k + 1][i] - RAMP[k][i]) * f).round() as u8;
    }
    Rgb(c)
}

pub fn luminance(c: &Rgb<u8>) -> f64 {
    0.2126 * c[0] as f64 + 0.7152 * c[1] as f64 + 0.0722 * c[2] as f64
}

pub struct Rendered {
    pub image: RgbImage,
    /// `horizon_windows,max_count` header, then `polygon_id,count` per polygon.
    pub vector: String,
    /// Map coordinates of the top-left pixel corner and the pixel scale.
    pub origin: [f64; 2],
    pub pixels_per_meter: f64,
}

impl Rendered {
    /// Pixel containing a map-frame point, if inside the image.
    pub fn pixel_of(&self, xy: [f64; 2]) -> Option<(u32, u32)> {
        let col = ((xy[0] - self.origin[0]) * self.pixels_per_meter).floor();
        let row = ((self.origin[1] - xy[1]) * self.pixels_per_meter).floor();
        (col >= 0.0 && row >= 0.0 && (col as u32) < self.image.width() && (row as u32) < self.image.height())
            .then_some((col as u32, row as u32))
    }

    pub fn save(&self, png: &Path, csv: &Path) -> Result<()> {
        self.image.save(png)?;
        fs::write(csv, &self.vector).map_err(Error::io(csv))
    }
}

pub fn vector_export(map: &PolygonMap, heat: &HeatMap) -> String {
    let mut out = String::from("horizon_windows,max_count\n");
    let _ = writeln!(out, "{},{}", heat.horizon_windows, heat.max_count);
    out.push_str("polygon_id,count\n");
    let mut ids: Vec<u32> = map.polygons().iter().map(|p| p.id).collect();
    ids.sort_unstable();
    for id in ids {
        let _ = writeln!(out, "{id},{}", heat.count(id));
    }
    out
}

/// Fills every polygon with the ramp color of its count relative to
/// `max_count`; higher counts are drawn last so overlaps show the darker
/// tile. The legend is a color bar with `max_count` printed above it.
pub fn render(map: &PolygonMap, heat: &HeatMap, style: &RenderStyle) -> Result<Rendered> {
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    if !(style.pixels_per_meter > 0.0) || !(style.margin_m >= 0.0) {
        return Err(Error::invalid("render scale must be positive"));
    }
    let b = map.bounds();
    let ppm = style.pixels_per_meter;
    let origin = [b.min[0] - style.margin_m, b.max[1] + style.margin_m];
    let legend_h = if style.legend { 24 } else { 0 };
    let width = (((b.max[0] - b.min[0]) + 2.0 * style.margin_m) * ppm).ceil().max(1.0) as u32;
    let height = (((b.max[1] - b.min[1]) + 2.0 * style.margin_m) * ppm).ceil().max(1.0) as u32;
    let width = width.max(if style.legend { 120 } else { 1 });
    let mut image = RgbImage::from_pixel(width, height + legend_h, BACKGROUND);

    let mut order: Vec<usize> = (0..map.len()).collect();
    let polys = map.polygons();
    order.sort_by_key(|&i| (heat.count(polys[i].id), polys[i].id));
    let max = heat.max_count.max(1) as f64;
    for i in order {
        let poly = &polys[i];
        let color = colormap(heat.count(poly.id) as f64 / max);
        let bb = poly.bbox();
        let c0 = ((bb.min[0] - origin[0]) * ppm).floor().max(0.0) as u32;
        let c1 = (((bb.max[0] - origin[0]) * ppm).ceil() as u32).min(width);
        let r0 = ((origin[1] - bb.max[1]) * ppm).floor().max(0.0) as u32;
        let r1 = (((origin[1] - bb.min[1]) * ppm).ceil() as u32).min(height);
        for row in r0..r1 {
            for col in c0..c1 {
                let x = origin[0] + (col as f64 + 0.5) / ppm;
                let y = origin[1] - (row as f64 + 0.5) / ppm;
                if point_in_polygon(&poly.vertices, [x, y]) {
                    image.put_pixel(col, row + legend_h, color);
                }
            }
        }
    }
    if style.legend {
        draw_legend(&mut image, heat.max_count);
    }
    Ok(Rendered {
        image,
        vector: vector_export(map, heat),
        // the map area starts below the legend strip
        origin: [origin[0], origin[1] + legend_h as f64 / ppm],
        pixels_per_meter: ppm,
    })
}

fn draw_legend(image: &mut RgbImage, max_count: u32) {
    let (x0, bar_w, bar_y, bar_h) = (4u32, 100u32, 14u32, 8u32);
    for dx in 0..bar_w {
        let c = colormap(dx as f64 / (bar_w - 1) as f64);
        for dy in 0..bar_h {
            image.put_pixel(x0 + dx, bar_y + dy, c);
        }
    }
    draw_number(image, x0 + bar_w - 1, 2, max_count);
    draw_number_left(image, x0, 2, 0);
}

/// 3x5 bitmap digits, one row per `u8` (lower three bits, MSB left).
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn draw_digit(image: &mut RgbImage, x: u32, y: u32, d: usize) {
    const SCALE: u32 = 2;
    for (row, bits) in DIGITS[d].iter().enumerate() {
        for col in 0..3u32 {
            if bits & (0b100 >> col) != 0 {
                for sy in 0..SCALE {
                    for sx in 0..SCALE {
                        let (px, py) = (x + col * SCALE + sx, y + row as u32 * SCALE + sy);
                        if px < image.width() && py < image.height() {
                            image.put_pixel(px, py, INK);
                        }
                    }
                }
            }
        }
    }
}

fn draw_number_left(image: &mut RgbImage, x: u32, y: u32, n: u32) {
    for (k, ch) in n.to_string().bytes().enumerate() {
        draw_digit(image, x + k as u32 * 8, y, (ch - b'0') as usize);
    }
}

/// Right-aligned at `x_right`.
fn draw_number(image: &mut RgbImage, x_right: u32, y: u32, n: u32) {
    let s = n.to_string();
    let w = s.len() as u32 * 8;
    draw_number_left(image, x_right.saturating_sub(w), y, n);
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::lanelet::{build_polygon_map, Lanelet};

    fn map() -> PolygonMap {
        build_polygon_map(&[Lanelet::straight(1, [0.0, 0.0], [10.0, 0.0], 3.0)], 0.5).unwrap()
    }

    fn heat(counts: &[(u32, u32)], horizon: usize) -> HeatMap {
        let counts: BTreeMap<u32, u32> = counts.iter().copied().filter(|c| c.1 > 0).collect();
        HeatMap {
            max_count: counts.values().copied().max().unwrap_or(0),
            counts,
            horizon_windows: horizon,
        }
    }

    #[test]
    fn ramp_is_monotone() {
        let mut prev = f64::INFINITY;
        for k in 0..=100 {
            let l = luminance(&colormap(k as f64 / 100.0));
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn zero_counts_render_uniformly_light() {
        let m = map();
        let r = render(&m, &heat(&[], 2000), &RenderStyle::default()).unwrap();
        let lightest = colormap(0.0);
        for p in m.polygons() {
            let (c, row) = r.pixel_of(p.centroid()).unwrap();
            assert_eq!(*r.image.get_pixel(c, row), lightest);
        }
        assert!(r
            .vector
            .starts_with("horizon_windows,max_count\n2000,0\npolygon_id,count\n0,0\n"));
        assert_eq!(r.vector.lines().count(), 3 + m.len());
    }

    #[test]
    fn darker_means_more_occupied() {
        let m = map();
        let h = heat(&[(0, 225), (3, 10), (7, 100), (12, 50)], 2000);
        let r = render(&m, &h, &RenderStyle::default()).unwrap();
        let lum = |id: u32| {
            let (c, row) = r.pixel_of(m.get(id).unwrap().centroid()).unwrap();
            luminance(r.image.get_pixel(c, row))
        };
        assert_eq!(
            *r.image.get_pixel(
                r.pixel_of(m.get(0).unwrap().centroid()).unwrap().0,
                r.pixel_of(m.get(0).unwrap().centroid()).unwrap().1
            ),
            colormap(1.0)
        );
        for (a, b) in [(0, 7), (7, 12), (12, 3), (3, 5)] {
            assert!(lum(a) < lum(b), "{a} vs {b}");
        }
        assert!(r.vector.contains("\n2000,225\n"));
    }

    #[test]
    fn empty_map_is_rejected_at_build_time() {
        assert!(build_polygon_map(&[], 0.5).is_err());
    }
}
