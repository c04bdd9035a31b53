//! Box arithmetic and raster handling.
//!
//! Boxes use integer pixel corners with the origin at the top-left and
//! exclusive `xmax`/`ymax`, so `area = (xmax - xmin) * (ymax - ymin)`.
//! All resampling is nearest-neighbour.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of classifier input crops.
pub const CROP_SIZE: u32 = 100;
/// Detector input resolution (square).
pub const DETECTOR_INPUT_SIZE: u32 = 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("degenerate box ({xmin},{ymin},{xmax},{ymax})")]
    Degenerate { xmin: i32, ymin: i32, xmax: i32, ymax: i32 },
    #[error("box {bbox} exceeds {width}x{height}")]
    OutOfBounds { bbox: BBox, width: u32, height: u32 },
    #[error("pixel buffer holds {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("invalid PPM: {0}")]
    Ppm(String),
}

/// Axis-aligned pixel rectangle with `xmax > xmin` and `ymax > ymin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i32; 4]", into = "[i32; 4]")]
pub struct BBox {
    xmin: i32,
    ymin: i32,
    xmax: i32,
    ymax: i32,
}

impl BBox {
    pub fn new(xmin: i32, ymin: i32, xmax: i32, ymax: i32) -> Result<BBox, GeometryError> {
        if xmax <= xmin || ymax <= ymin {
            return Err(GeometryError::Degenerate { xmin, ymin, xmax, ymax });
        }
        Ok(BBox { xmin, ymin, xmax, ymax })
    }

    pub fn xmin(&self) -> i32 {
        self.xmin
    }
    pub fn ymin(&self) -> i32 {
        self.ymin
    }
    pub fn xmax(&self) -> i32 {
        self.xmax
    }
    pub fn ymax(&self) -> i32 {
        self.ymax
    }

    pub fn width(&self) -> u32 {
        (self.xmax - self.xmin) as u32
    }

    pub fn height(&self) -> u32 {
        (self.ymax - self.ymin) as u32
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn corners(&self) -> [i32; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    /// True when the box lies inside `[0,width] x [0,height]`.
    pub fn within(&self, width: u32, height: u32) -> bool {
        self.xmin >= 0 && self.ymin >= 0 && i64::from(self.xmax) <= i64::from(width) && i64::from(self.ymax) <= i64::from(height)
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        intersection_area(self, other) > 0
    }

    /// Clips to `[0,width] x [0,height]`; `None` when nothing remains.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<BBox> {
        let w = i32::try_from(width).unwrap_or(i32::MAX);
        let h = i32::try_from(height).unwrap_or(i32::MAX);
        BBox::new(self.xmin.clamp(0, w), self.ymin.clamp(0, h), self.xmax.clamp(0, w), self.ymax.clamp(0, h)).ok()
    }

    fn check_within(&self, width: u32, height: u32) -> Result<(), GeometryError> {
        if self.within(width, height) {
            Ok(())
        } else {
            Err(GeometryError::OutOfBounds { bbox: *self, width, height })
        }
    }
}

impl TryFrom<[i32; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(c: [i32; 4]) -> Result<Self, Self::Error> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [i32; 4] {
    fn from(b: BBox) -> Self {
        b.corners()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.xmin, self.ymin, self.xmax, self.ymax)
    }
}

pub fn intersection_area(a: &BBox, b: &BBox) -> u64 {
    let w = i64::from(a.xmax.min(b.xmax)) - i64::from(a.xmin.max(b.xmin));
    let h = i64::from(a.ymax.min(b.ymax)) - i64::from(a.ymin.max(b.ymin));
    if w <= 0 || h <= 0 {
        0
    } else {
        (w * h) as u64
    }
}

/// Intersection over union. Areas are exact integers; one final division.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Mirrors `b` about the vertical centre line of an image `image_width` wide.
pub fn horizontal_flip(b: &BBox, image_width: u32) -> Result<BBox, GeometryError> {
    if b.xmin < 0 || i64::from(b.xmax) > i64::from(image_width) {
        return Err(GeometryError::OutOfBounds { bbox: *b, width: image_width, height: u32::MAX });
    }
    let w = image_width as i32;
    BBox::new(w - b.xmax, b.ymin, w - b.xmin, b.ymax)
}

/// Row-major RGB raster.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame").field("width", &self.width).field("height", &self.height).finish_non_exhaustive()
    }
}

impl Frame {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Frame, GeometryError> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(GeometryError::BufferSize { expected, actual: data.len() });
        }
        Ok(Frame { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Frame {
        let data = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Frame { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Fills the part of `b` that lies inside the frame.
    pub fn fill_rect(&mut self, b: &BBox, rgb: [u8; 3]) {
        let Some(b) = b.clamp_to(self.width, self.height) else { return };
        for y in b.ymin..b.ymax {
            for x in b.xmin..b.xmax {
                self.set_pixel(x as u32, y as u32, rgb);
            }
        }
    }

    /// Draws a rectangle outline `thickness` pixels wide, inset into `b`.
    pub fn draw_outline(&mut self, b: &BBox, rgb: [u8; 3], thickness: u32) {
        let Some(b) = b.clamp_to(self.width, self.height) else { return };
        let t = thickness.min(b.width().min(b.height())) as i32;
        for y in b.ymin..b.ymax {
            for x in b.xmin..b.xmax {
                if x < b.xmin + t || x >= b.xmax - t || y < b.ymin + t || y >= b.ymax - t {
                    self.set_pixel(x as u32, y as u32, rgb);
                }
            }
        }
    }
}

/// Fixed-size classifier input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crop(Frame);

impl Crop {
    pub fn frame(&self) -> &Frame {
        &self.0
    }

    pub fn into_frame(self) -> Frame {
        self.0
    }
}

/// Nearest source index for destination index `dst`.
fn nearest_index(dst: u32, dst_len: u32, src_origin: u32, src_len: u32) -> u32 {
    src_origin + ((u64::from(dst) * u64::from(src_len)) / u64::from(dst_len)) as u32
}

fn resample(f: &Frame, x0: u32, y0: u32, sw: u32, sh: u32, w: u32, h: u32) -> Frame {
    let mut data = Vec::with_capacity(w as usize * h as usize * 3);
    let cols: Vec<u32> = (0..w).map(|x| nearest_index(x, w, x0, sw)).collect();
    for y in 0..h {
        let sy = nearest_index(y, h, y0, sh);
        let row = f.offset(0, sy);
        for &sx in &cols {
            let o = row + sx as usize * 3;
            data.extend_from_slice(&f.data[o..o + 3]);
        }
    }
    Frame { width: w, height: h, data }
}

/// Extracts `b` from `f` and resamples it to a 100x100 crop.
pub fn crop_region(f: &Frame, b: &BBox) -> Result<Crop, GeometryError> {
    b.check_within(f.width, f.height)?;
    Ok(Crop(resample(f, b.xmin as u32, b.ymin as u32, b.width(), b.height(), CROP_SIZE, CROP_SIZE)))
}

/// Nearest-neighbour resize. Panics if `w` or `h` is zero.
pub fn resize_frame(f: &Frame, w: u32, h: u32) -> Frame {
    assert!(w > 0 && h > 0, "resize target must be non-empty");
    if w == f.width && h == f.height {
        return f.clone();
    }
    resample(f, 0, 0, f.width, f.height, w, h)
}

/// Encodes a binary PPM (P6), optionally carrying one `#` comment line.
pub fn encode_ppm(f: &Frame, comment: Option<&str>) -> Vec<u8> {
    let mut out = Vec::with_capacity(f.data.len() + 64);
    out.extend_from_slice(b"P6\n");
    if let Some(c) = comment {
        let c: String = c.chars().filter(|&ch| ch != '\n' && ch != '\r').collect();
        out.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    out.extend_from_slice(format!("{} {}\n255\n", f.width, f.height).as_bytes());
    out.extend_from_slice(&f.data);
    out
}

/// Decodes a binary PPM (P6, maxval 255). Returns the first comment, if any.
pub fn decode_ppm(bytes: &[u8]) -> Result<(Frame, Option<String>), GeometryError> {
    let bad = |m: &str| GeometryError::Ppm(m.to_string());
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(bad("missing P6 magic"));
    }
    let mut pos = 2;
    let mut comment = None;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
                    if comment.is_none() {
                        comment = Some(String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string());
                    }
                    pos = end;
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let digits = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?;
        *field = digits.parse().map_err(|_| bad("bad header number"))?;
    }
    if fields[2] != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing separator before raster"));
    }
    pos += 1;
    let frame = Frame::new(fields[0], fields[1], bytes[pos..].to_vec())?;
    Ok((frame, comment))
}
