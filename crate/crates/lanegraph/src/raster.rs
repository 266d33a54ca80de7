//! Raster data types plus thresholding, ground-truth rendering, direction
//! maps, bilinear resizing, sliding-window planning, overlap-average
//! stitching, pixel-change statistics, and PNG I/O.
//!
//! Conventions: rasters are row-major with `x` = column and `y` = row; the
//! center of pixel `(x, y)` sits at real coordinates `(x, y)`. Gray values
//! live in `[0, 1]`.

use std::fmt;
use std::path::Path;

use crate::graph::{LaneGraph, Point2};

/// Errors from raster construction, operations, and file I/O.
#[derive(Debug)]
pub enum RasterError {
    /// An operation parameter was out of its domain.
    InvalidParameter(String),
    /// Two rasters that must agree in size did not.
    DimMismatch(String),
    /// File could not be read or written.
    Io(std::io::Error),
    /// Image bytes could not be decoded or encoded.
    Image(String),
}

impl fmt::Display for RasterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RasterError::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            RasterError::DimMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            RasterError::Io(e) => write!(f, "i/o error: {e}"),
            RasterError::Image(msg) => write!(f, "image error: {msg}"),
        }
    }
}

impl std::error::Error for RasterError {}

impl From<std::io::Error> for RasterError {
    fn from(e: std::io::Error) -> Self {
        RasterError::Io(e)
    }
}

/// Row-major grayscale raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayRaster {
    pub width: usize,
    pub height: usize,
    data: Vec<f64>,
}

impl GrayRaster {
    /// All-zero raster.
    pub fn zeros(width: usize, height: usize) -> Self {
        GrayRaster {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Constant-valued raster; the value must already be in `[0, 1]`.
    pub fn constant(width: usize, height: usize, v: f64) -> Self {
        assert!((0.0..=1.0).contains(&v), "constant {v} outside [0,1]");
        GrayRaster {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    /// Builds a raster from row-major data, clamping every value into
    /// `[0, 1]`. Non-finite values are rejected.
    pub fn from_data_clamped(
        width: usize,
        height: usize,
        data: Vec<f64>,
    ) -> Result<Self, RasterError> {
        if data.len() != width * height {
            return Err(RasterError::DimMismatch(format!(
                "data length {} != {width}x{height}",
                data.len()
            )));
        }
        let mut data = data;
        for v in &mut data {
            if !v.is_finite() {
                return Err(RasterError::InvalidParameter(format!(
                    "non-finite raster value {v}"
                )));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(GrayRaster {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Copies the `w`×`h` rectangle whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self, RasterError> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(RasterError::InvalidParameter(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds raster {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(GrayRaster {
            width: w,
            height: h,
            data,
        })
    }
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<bool>) -> Result<Self, RasterError> {
        if data.len() != width * height {
            return Err(RasterError::DimMismatch(format!(
                "data length {} != {width}x{height}",
                data.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// 0/1 float view (foreground = 1.0).
    pub fn to_gray(&self) -> GrayRaster {
        GrayRaster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Three-channel direction raster. Channels are interleaved row-major:
/// `(c1, c2, c3)` at index `(y*width + x)*3`. On lane pixels `c1`/`c2`
/// encode the unit direction components mapped from `[-1, 1]` to `[0, 1]`
/// and `c3 = 1`; background pixels are exactly `(0, 0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMap {
    pub width: usize,
    pub height: usize,
    data: Vec<f64>,
}

impl DirectionMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        DirectionMap {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64, f64) {
        let i = (y * self.width + x) * 3;
        (self.data[i], self.data[i + 1], self.data[i + 2])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: (f64, f64, f64)) {
        let i = (y * self.width + x) * 3;
        self.data[i] = c.0;
        self.data[i + 1] = c.1;
        self.data[i + 2] = c.2;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Binarizes a probability raster: pixel true iff `p >= alpha`.
pub fn threshold(p: &GrayRaster, alpha: f64) -> Result<BinaryMask, RasterError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RasterError::InvalidParameter(format!(
            "threshold alpha must lie in (0,1), got {alpha}"
        )));
    }
    Ok(BinaryMask {
        width: p.width,
        height: p.height,
        data: p.data.iter().map(|&v| v >= alpha).collect(),
    })
}

/// Squared distance from point `p` to segment `a`-`b`.
fn point_segment_dist_sq(p: Point2, a: Point2, b: Point2) -> f64 {
    let abx = b.x - a.x;
    let aby = b.y - a.y;
    let len_sq = abx * abx + aby * aby;
    let t = if len_sq > 0.0 {
        (((p.x - a.x) * abx + (p.y - a.y) * aby) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = a.x + t * abx - p.x;
    let cy = a.y + t * aby - p.y;
    cx * cx + cy * cy
}

/// Pixel-index range `[lo, hi]` covered by `[min_v - r, max_v + r]` clamped
/// to `[0, n)`; empty ranges come back as `None`.
fn clamped_range(min_v: f64, max_v: f64, r: f64, n: usize) -> Option<(usize, usize)> {
    let lo = (min_v - r).floor().max(0.0);
    let hi = (max_v + r).ceil().min(n as f64 - 1.0);
    if lo > hi || n == 0 {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}

/// Renders the graph's edges as white lines: a pixel is foreground iff its
/// center lies within `line_width_px / 2` of some edge segment. Edges (or
/// parts of edges) outside the canvas are clipped.
pub fn render_graph_mask(
    g: &LaneGraph,
    canvas_w: usize,
    canvas_h: usize,
    line_width_px: u32,
) -> Result<BinaryMask, RasterError> {
    if line_width_px < 1 {
        return Err(RasterError::InvalidParameter(
            "line width must be >= 1".into(),
        ));
    }
    let r = line_width_px as f64 / 2.0;
    let mut m = BinaryMask::zeros(canvas_w, canvas_h);
    for &(a, b) in g.edges() {
        let pa = g.node(a);
        let pb = g.node(b);
        let Some((x0, x1)) = clamped_range(pa.x.min(pb.x), pa.x.max(pb.x), r, canvas_w) else {
            continue;
        };
        let Some((y0, y1)) = clamped_range(pa.y.min(pb.y), pa.y.max(pb.y), r, canvas_h) else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                if !m.get(x, y) {
                    let p = Point2::new(x as f64, y as f64);
                    if point_segment_dist_sq(p, pa, pb) <= r * r {
                        m.set(x, y, true);
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Renders a direction map: each lane pixel carries the unit direction of
/// its nearest edge segment (oriented from the lower node id to the
/// higher), encoded per channel as `(component + 1) / 2`, with a constant
/// third channel of 1. Background stays exactly zero. Ties on distance keep
/// the earliest edge in the sorted edge list.
pub fn render_direction_map(
    g: &LaneGraph,
    canvas_w: usize,
    canvas_h: usize,
    line_width_px: u32,
) -> Result<DirectionMap, RasterError> {
    if line_width_px < 1 {
        return Err(RasterError::InvalidParameter(
            "line width must be >= 1".into(),
        ));
    }
    let r = line_width_px as f64 / 2.0;
    let mut best = vec![f64::INFINITY; canvas_w * canvas_h];
    let mut dir: Vec<(f64, f64)> = vec![(0.0, 0.0); canvas_w * canvas_h];
    for &(a, b) in g.edges() {
        let pa = g.node(a);
        let pb = g.node(b);
        let len = pa.dist(pb);
        let (ux, uy) = if len > 0.0 {
            ((pb.x - pa.x) / len, (pb.y - pa.y) / len)
        } else {
            continue;
        };
        let Some((x0, x1)) = clamped_range(pa.x.min(pb.x), pa.x.max(pb.x), r, canvas_w) else {
            continue;
        };
        let Some((y0, y1)) = clamped_range(pa.y.min(pb.y), pa.y.max(pb.y), r, canvas_h) else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = Point2::new(x as f64, y as f64);
                let d = point_segment_dist_sq(p, pa, pb);
                let i = y * canvas_w + x;
                if d <= r * r && d < best[i] {
                    best[i] = d;
                    dir[i] = (ux, uy);
                }
            }
        }
    }
    let mut map = DirectionMap::zeros(canvas_w, canvas_h);
    for y in 0..canvas_h {
        for x in 0..canvas_w {
            let i = y * canvas_w + x;
            if best[i].is_finite() {
                let (ux, uy) = dir[i];
                map.set(x, y, ((ux + 1.0) / 2.0, (uy + 1.0) / 2.0, 1.0));
            }
        }
    }
    Ok(map)
}

/// Sliding-window layout over a tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileLayout {
    pub tile_w: usize,
    pub tile_h: usize,
    pub window: usize,
    pub stride: usize,
    /// Window origins `(x, y)`, row-major (y outer).
    pub origins: Vec<(usize, usize)>,
}

fn axis_origins(tile: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut o = 0;
    while o + window <= tile {
        out.push(o);
        o += stride;
    }
    let last = tile - window;
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Plans sliding-window origins at multiples of `stride`, with a final
/// clamped origin per axis so windows cover the whole tile without reading
/// out of bounds.
pub fn window_plan(
    tile_w: usize,
    tile_h: usize,
    window: usize,
    stride: usize,
) -> Result<TileLayout, RasterError> {
    if window == 0 || stride == 0 {
        return Err(RasterError::InvalidParameter(
            "window and stride must be >= 1".into(),
        ));
    }
    if window > tile_w || window > tile_h {
        return Err(RasterError::InvalidParameter(format!(
            "window {window} exceeds tile {tile_w}x{tile_h}"
        )));
    }
    if stride > window {
        return Err(RasterError::InvalidParameter(format!(
            "stride {stride} exceeds window {window}; coverage would have gaps"
        )));
    }
    let xs = axis_origins(tile_w, window, stride);
    let ys = axis_origins(tile_h, window, stride);
    let mut origins = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            origins.push((x, y));
        }
    }
    Ok(TileLayout {
        tile_w,
        tile_h,
        window,
        stride,
        origins,
    })
}

/// Averages overlapping window predictions back into a tile-sized raster.
/// Accumulates sum and cover-count grids in the given window order (the
/// result is independent of that order up to floating-point association,
/// and callers that keep a fixed order get bit-identical output). Exact
/// duplicates (same origin and same data) are counted once, so feeding a
/// window twice cannot skew the average. Pixels covered by no window are 0.
pub fn stitch_average(
    windows: &[((usize, usize), GrayRaster)],
    layout: &TileLayout,
) -> Result<GrayRaster, RasterError> {
    let mut sum = vec![0.0f64; layout.tile_w * layout.tile_h];
    let mut count = vec![0u32; layout.tile_w * layout.tile_h];
    let mut accepted: Vec<usize> = Vec::new();
    for (wi, ((ox, oy), r)) in windows.iter().enumerate() {
        if accepted
            .iter()
            .any(|&p| windows[p].0 == (*ox, *oy) && windows[p].1 == *r)
        {
            continue;
        }
        accepted.push(wi);
        if r.width != layout.window || r.height != layout.window {
            return Err(RasterError::DimMismatch(format!(
                "window raster {}x{} != layout window {}",
                r.width, r.height, layout.window
            )));
        }
        if ox + layout.window > layout.tile_w || oy + layout.window > layout.tile_h {
            return Err(RasterError::InvalidParameter(format!(
                "window origin ({ox},{oy}) overruns tile {}x{}",
                layout.tile_w, layout.tile_h
            )));
        }
        for wy in 0..layout.window {
            let row = (oy + wy) * layout.tile_w + ox;
            for wx in 0..layout.window {
                sum[row + wx] += r.get(wx, wy);
                count[row + wx] += 1;
            }
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(GrayRaster {
        width: layout.tile_w,
        height: layout.tile_h,
        data,
    })
}

/// Bilinear resize with the half-pixel convention
/// `src = (dst + 0.5) * (in / out) - 0.5` and edge clamping. Output values
/// stay within the input's min/max range.
pub fn resize_bilinear(r: &GrayRaster, out_w: usize, out_h: usize) -> GrayRaster {
    assert!(out_w >= 1 && out_h >= 1, "resize target must be >= 1x1");
    if out_w == r.width && out_h == r.height {
        return r.clone();
    }
    let sx = r.width as f64 / out_w as f64;
    let sy = r.height as f64 / out_h as f64;
    let mut out = GrayRaster::zeros(out_w, out_h);
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (r.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(r.height - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (r.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(r.width - 1);
            let tx = fx - x0 as f64;
            let top = r.get(x0, y0) * (1.0 - tx) + r.get(x1, y0) * tx;
            let bot = r.get(x0, y1) * (1.0 - tx) + r.get(x1, y1) * tx;
            out.set(ox, oy, top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Pixel-change statistics between two same-sized masks.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MaskChangeStats {
    /// Pixels true in `before` and false in `after`.
    pub white_to_black: u64,
    /// Pixels false in `before` and true in `after`.
    pub black_to_white: u64,
    /// `|white_to_black - black_to_white|`.
    pub abs_diff: u64,
    /// `white_to_black` as a percentage of `before`'s white pixels
    /// (0 when `before` has none).
    pub rel_white_to_black_pct: f64,
    /// `black_to_white` as a percentage of `before`'s black pixels
    /// (0 when `before` has none).
    pub rel_black_to_white_pct: f64,
}

/// Counts pixels that flipped between two masks, with per-source-class
/// percentages.
pub fn mask_change_stats(
    before: &BinaryMask,
    after: &BinaryMask,
) -> Result<MaskChangeStats, RasterError> {
    if before.width != after.width || before.height != after.height {
        return Err(RasterError::DimMismatch(format!(
            "before {}x{} vs after {}x{}",
            before.width, before.height, after.width, after.height
        )));
    }
    let mut w2b = 0u64;
    let mut b2w = 0u64;
    let mut white = 0u64;
    for (&b, &a) in before.data.iter().zip(&after.data) {
        if b {
            white += 1;
            if !a {
                w2b += 1;
            }
        } else if a {
            b2w += 1;
        }
    }
    let black = before.data.len() as u64 - white;
    let pct = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 * 100.0 };
    Ok(MaskChangeStats {
        white_to_black: w2b,
        black_to_white: b2w,
        abs_diff: w2b.abs_diff(b2w),
        rel_white_to_black_pct: pct(w2b, white),
        rel_black_to_white_pct: pct(b2w, black),
    })
}

// ---------------------------------------------------------------------------
// PNG I/O
// ---------------------------------------------------------------------------

/// Saves a gray raster as 8-bit grayscale PNG (`round(v * 255)`).
pub fn save_gray_png(r: &GrayRaster, path: &Path) -> Result<(), RasterError> {
    let buf: Vec<u8> = r
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(r.width as u32, r.height as u32, buf)
        .ok_or_else(|| RasterError::Image("raster too large for image buffer".into()))?;
    img.save(path).map_err(|e| RasterError::Image(e.to_string()))
}

/// Saves a binary mask as 8-bit grayscale PNG (true ⇔ 255).
pub fn save_mask_png(m: &BinaryMask, path: &Path) -> Result<(), RasterError> {
    let buf: Vec<u8> = m.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(m.width as u32, m.height as u32, buf)
        .ok_or_else(|| RasterError::Image("mask too large for image buffer".into()))?;
    img.save(path).map_err(|e| RasterError::Image(e.to_string()))
}

/// Saves a direction map as 8-bit RGB PNG.
pub fn save_direction_png(d: &DirectionMap, path: &Path) -> Result<(), RasterError> {
    let buf: Vec<u8> = d
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::RgbImage::from_raw(d.width as u32, d.height as u32, buf)
        .ok_or_else(|| RasterError::Image("map too large for image buffer".into()))?;
    img.save(path).map_err(|e| RasterError::Image(e.to_string()))
}

/// Decodes PNG bytes into a gray raster (values `v / 255`). Non-grayscale
/// images are converted via standard luma weighting.
pub fn decode_gray_png(bytes: &[u8]) -> Result<GrayRaster, RasterError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| RasterError::Image(e.to_string()))?;
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok(GrayRaster {
        width: w,
        height: h,
        data: gray.into_raw().iter().map(|&v| v as f64 / 255.0).collect(),
    })
}

/// Loads an 8-bit grayscale PNG as a gray raster.
pub fn load_gray_png(path: &Path) -> Result<GrayRaster, RasterError> {
    decode_gray_png(&std::fs::read(path)?)
}

/// Loads a mask PNG: a pixel is true iff its gray value is 255.
pub fn load_mask_png(path: &Path) -> Result<BinaryMask, RasterError> {
    let g = load_gray_png(path)?;
    Ok(BinaryMask {
        width: g.width,
        height: g.height,
        data: g.data.iter().map(|&v| v == 1.0).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node_graph(a: Point2, b: Point2) -> LaneGraph {
        let mut g = LaneGraph::new();
        let ia = g.add_node(a);
        let ib = g.add_node(b);
        g.add_edge(ia, ib).unwrap();
        g
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let r = GrayRaster::from_data_clamped(2, 1, vec![0.5, 0.4999]).unwrap();
        let m = threshold(&r, 0.5).unwrap();
        assert!(m.get(0, 0));
        assert!(!m.get(1, 0));
    }

    #[test]
    fn threshold_all_zero_and_checkerboard() {
        let z = GrayRaster::zeros(4, 3);
        assert_eq!(threshold(&z, 0.5).unwrap().count_true(), 0);

        let data: Vec<f64> = (0..12).map(|i| (i % 2) as f64).collect();
        let r = GrayRaster::from_data_clamped(4, 3, data.clone()).unwrap();
        let m = threshold(&r, 0.5).unwrap();
        for (i, &v) in data.iter().enumerate() {
            assert_eq!(m.data()[i], v == 1.0);
        }
    }

    #[test]
    fn threshold_rejects_out_of_range_alpha() {
        let r = GrayRaster::zeros(1, 1);
        for alpha in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(threshold(&r, alpha).is_err());
        }
    }

    #[test]
    fn render_mask_horizontal_band() {
        let g = two_node_graph(Point2::new(5.0, 50.0), Point2::new(25.0, 50.0));
        let m = render_graph_mask(&g, 64, 64, 5).unwrap();
        // Width 5 about row 50: rows 48..=52 inclusive at mid-span columns.
        for y in 0..64 {
            let expected = (48..=52).contains(&y);
            assert_eq!(m.get(15, y), expected, "row {y}");
        }
        // Caps extend half a width beyond the endpoints.
        assert!(m.get(5, 50) && m.get(25, 50));
        assert!(!m.get(2, 50) && !m.get(28, 50));
    }

    #[test]
    fn render_mask_matches_per_pixel_oracle() {
        let mut g = LaneGraph::new();
        let a = g.add_node(Point2::new(3.2, 4.1));
        let b = g.add_node(Point2::new(20.7, 15.9));
        let c = g.add_node(Point2::new(8.0, 22.5));
        g.add_edge(a, b).unwrap();
        g.add_edge(b, c).unwrap();
        let m = render_graph_mask(&g, 30, 30, 5).unwrap();
        for y in 0..30 {
            for x in 0..30 {
                let p = Point2::new(x as f64, y as f64);
                let d = g
                    .edges()
                    .iter()
                    .map(|&(u, v)| point_segment_dist_sq(p, g.node(u), g.node(v)))
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(m.get(x, y), d <= 2.5 * 2.5, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn render_mask_empty_and_offscreen() {
        let m = render_graph_mask(&LaneGraph::new(), 8, 8, 5).unwrap();
        assert_eq!(m.count_true(), 0);
        let g = two_node_graph(Point2::new(100.0, 100.0), Point2::new(120.0, 100.0));
        let m = render_graph_mask(&g, 8, 8, 5).unwrap();
        assert_eq!(m.count_true(), 0);
    }

    #[test]
    fn direction_map_axis_aligned() {
        // Edge 0->1 pointing +x.
        let g = two_node_graph(Point2::new(2.0, 5.0), Point2::new(12.0, 5.0));
        let d = render_direction_map(&g, 16, 16, 5).unwrap();
        assert_eq!(d.get(7, 5), (1.0, 0.5, 1.0)); // decodes to (1, 0)
        assert_eq!(d.get(7, 0), (0.0, 0.0, 0.0)); // background

        // Edge 0->1 pointing -y (node 1 above node 0).
        let g = two_node_graph(Point2::new(5.0, 12.0), Point2::new(5.0, 2.0));
        let d = render_direction_map(&g, 16, 16, 5).unwrap();
        assert_eq!(d.get(5, 7), (0.5, 0.0, 1.0)); // decodes to (0, -1)
    }

    #[test]
    fn direction_map_lane_pixels_decode_to_unit_norm() {
        let g = two_node_graph(Point2::new(2.0, 3.0), Point2::new(20.0, 17.0));
        let d = render_direction_map(&g, 24, 24, 5).unwrap();
        let mut lanes = 0;
        for y in 0..24 {
            for x in 0..24 {
                let (c1, c2, c3) = d.get(x, y);
                if c3 != 0.0 {
                    lanes += 1;
                    let vx = c1 * 2.0 - 1.0;
                    let vy = c2 * 2.0 - 1.0;
                    assert!((vx.hypot(vy) - 1.0).abs() < 1e-3);
                } else {
                    assert_eq!((c1, c2), (0.0, 0.0));
                }
            }
        }
        assert!(lanes > 0);
    }

    #[test]
    fn direction_map_lane_set_matches_rendered_mask() {
        let g = two_node_graph(Point2::new(3.0, 4.0), Point2::new(18.0, 13.0));
        let d = render_direction_map(&g, 24, 24, 5).unwrap();
        let m = render_graph_mask(&g, 24, 24, 5).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                assert_eq!(d.get(x, y).2 == 1.0, m.get(x, y));
            }
        }
    }

    #[test]
    fn window_plan_counts() {
        assert_eq!(window_plan(4096, 4096, 1024, 512).unwrap().origins.len(), 49);
        assert_eq!(window_plan(2048, 2048, 1024, 512).unwrap().origins.len(), 9);
        let single = window_plan(256, 256, 256, 128).unwrap();
        assert_eq!(single.origins, vec![(0, 0)]);
        assert!(window_plan(100, 100, 256, 128).is_err());
    }

    #[test]
    fn window_plan_clamps_final_origin() {
        let layout = window_plan(1000, 1000, 256, 200).unwrap();
        let xs: Vec<usize> = layout.origins.iter().take(5).map(|&(x, _)| x).collect();
        assert_eq!(xs, vec![0, 200, 400, 600, 744]);
        // Coverage: every pixel is inside some window.
        let mut covered = vec![false; 1000];
        for &(x, _) in &layout.origins {
            for c in x..x + 256 {
                covered[c] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
        // A stride wider than the window would leave gaps.
        assert!(window_plan(1000, 1000, 256, 512).is_err());
    }

    #[test]
    fn stitch_constant_and_half_overlap() {
        let layout = window_plan(4, 2, 2, 1).unwrap();
        let windows: Vec<((usize, usize), GrayRaster)> = layout
            .origins
            .iter()
            .map(|&o| (o, GrayRaster::constant(2, 2, 0.7)))
            .collect();
        let out = stitch_average(&windows, &layout).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));

        // Two windows sharing a 1-column overlap: 0-valued and 1-valued.
        let layout = TileLayout {
            tile_w: 3,
            tile_h: 2,
            window: 2,
            stride: 1,
            origins: vec![(0, 0), (1, 0)],
        };
        let windows = vec![
            ((0, 0), GrayRaster::zeros(2, 2)),
            ((1, 0), GrayRaster::constant(2, 2, 1.0)),
        ];
        let out = stitch_average(&windows, &layout).unwrap();
        for y in 0..2 {
            assert_eq!(out.get(0, y), 0.0);
            assert_eq!(out.get(1, y), 0.5);
            assert_eq!(out.get(2, y), 1.0);
        }
    }

    #[test]
    fn stitch_duplicate_window_is_idempotent() {
        let layout = window_plan(3, 3, 2, 1).unwrap();
        let mk = |v: f64| GrayRaster::constant(2, 2, v);
        let mut windows: Vec<((usize, usize), GrayRaster)> = layout
            .origins
            .iter()
            .enumerate()
            .map(|(i, &o)| (o, mk((i as f64 + 1.0) / 10.0)))
            .collect();
        let base = stitch_average(&windows, &layout).unwrap();
        windows.push(windows[2].clone());
        let dup = stitch_average(&windows, &layout).unwrap();
        for (a, b) in base.data().iter().zip(dup.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stitch_rejects_bad_window() {
        let layout = window_plan(4, 4, 2, 2).unwrap();
        let windows = vec![((0usize, 0usize), GrayRaster::zeros(3, 3))];
        assert!(stitch_average(&windows, &layout).is_err());
        let windows = vec![((3usize, 3usize), GrayRaster::zeros(2, 2))];
        assert!(stitch_average(&windows, &layout).is_err());
    }

    #[test]
    fn resize_constant_identity_and_ramp() {
        let c = GrayRaster::constant(5, 4, 0.3);
        let r = resize_bilinear(&c, 9, 2);
        assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));

        let same = resize_bilinear(&c, 5, 4);
        assert_eq!(same, c);

        // 2x2 [[0,1],[0,1]] to 2 rows x 4 cols: each row 0, 0.25, 0.75, 1.
        let src = GrayRaster::from_data_clamped(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = resize_bilinear(&src, 4, 2);
        for y in 0..2 {
            assert_eq!(out.get(0, y), 0.0);
            assert_eq!(out.get(1, y), 0.25);
            assert_eq!(out.get(2, y), 0.75);
            assert_eq!(out.get(3, y), 1.0);
        }
    }

    #[test]
    fn resize_respects_input_bounds() {
        let mut r = GrayRaster::zeros(7, 5);
        for (i, v) in r.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin().abs();
        }
        let lo = r.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = r.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (w, h) in [(3, 9), (20, 2), (1, 1)] {
            let out = resize_bilinear(&r, w, h);
            for &v in out.data() {
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn change_stats_identical_and_full_flip() {
        let a = BinaryMask::from_data(2, 2, vec![true, false, true, false]).unwrap();
        let s = mask_change_stats(&a, &a).unwrap();
        assert_eq!(
            (s.white_to_black, s.black_to_white, s.abs_diff),
            (0, 0, 0)
        );
        assert_eq!(s.rel_white_to_black_pct, 0.0);

        let white = BinaryMask::from_data(10, 10, vec![true; 100]).unwrap();
        let black = BinaryMask::zeros(10, 10);
        let s = mask_change_stats(&white, &black).unwrap();
        assert_eq!(s.white_to_black, 100);
        assert_eq!(s.black_to_white, 0);
        assert_eq!(s.abs_diff, 100);
        assert_eq!(s.rel_white_to_black_pct, 100.0);
        assert_eq!(s.rel_black_to_white_pct, 0.0);
    }

    #[test]
    fn change_stats_symmetry_and_dim_check() {
        let a = BinaryMask::from_data(3, 1, vec![true, false, true]).unwrap();
        let b = BinaryMask::from_data(3, 1, vec![false, true, true]).unwrap();
        let ab = mask_change_stats(&a, &b).unwrap();
        let ba = mask_change_stats(&b, &a).unwrap();
        assert_eq!(ab.white_to_black, ba.black_to_white);
        assert_eq!(ab.black_to_white, ba.white_to_black);

        let c = BinaryMask::zeros(2, 2);
        assert!(mask_change_stats(&a, &c).is_err());
    }

    #[test]
    fn png_round_trips() {
        let dir = std::env::temp_dir().join("lanegraph-raster-io");
        std::fs::create_dir_all(&dir).unwrap();

        // Gray: quantized values k/255 survive exactly.
        let data: Vec<f64> = (0..12).map(|k| (k * 20) as f64 / 255.0).collect();
        let r = GrayRaster::from_data_clamped(4, 3, data).unwrap();
        let p = dir.join("gray.png");
        save_gray_png(&r, &p).unwrap();
        let back = load_gray_png(&p).unwrap();
        assert_eq!(r, back);

        // Mask: exact.
        let m = BinaryMask::from_data(3, 2, vec![true, false, true, false, false, true]).unwrap();
        let p = dir.join("mask.png");
        save_mask_png(&m, &p).unwrap();
        assert_eq!(load_mask_png(&p).unwrap(), m);

        // Direction map: background zero survives; lane channels quantized.
        let g = two_node_graph(Point2::new(1.0, 3.0), Point2::new(14.0, 3.0));
        let d = render_direction_map(&g, 16, 8, 3).unwrap();
        let p = dir.join("dir.png");
        save_direction_png(&d, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let img = image::load_from_memory(&bytes).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(7, 3), &image::Rgb([255, 128, 255]));
        assert_eq!(img.get_pixel(0, 0), &image::Rgb([0, 0, 0]));
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(decode_gray_png(b"not a png").is_err());
        assert!(decode_gray_png(&[]).is_err());
    }

    #[test]
    fn crop_copies_rectangle() {
        let mut g = GrayRaster::zeros(6, 4);
        for y in 0..4 {
            for x in 0..6 {
                g.set(x, y, (y * 6 + x) as f64 / 23.0);
            }
        }
        let c = g.crop(2, 1, 3, 2).unwrap();
        assert_eq!((c.width, c.height), (3, 2));
        for y in 0..2 {
            for x in 0..3 {
                assert_eq!(c.get(x, y), g.get(x + 2, y + 1));
            }
        }
        assert_eq!(g.crop(0, 0, 6, 4).unwrap(), g);
        assert!(g.crop(4, 0, 3, 2).is_err());
        assert!(g.crop(0, 3, 1, 2).is_err());
    }
}
