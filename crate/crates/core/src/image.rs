//! Grayscale grids, confounder masks and binary PGM (P5) I/O.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Param(format!("empty image {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::shape(height * width, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Param(format!("intensity {v} outside [0,1]")));
        }
        Ok(Self { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value.clamp(0.0, 1.0); height * width],
        }
    }

    /// Clamps every value into `[0, 1]`; used where arithmetic may overshoot.
    pub(crate) fn from_unclipped(height: usize, width: usize, mut values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        for v in &mut values {
            *v = v.clamp(0.0, 1.0);
        }
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Pixel-wise mean of a non-empty set of equally sized images.
    pub fn mean<'a>(images: impl IntoIterator<Item = &'a ImageGrid>) -> Result<ImageGrid> {
        let mut iter = images.into_iter();
        let first = iter.next().ok_or_else(|| Error::Param("mean of zero images".into()))?;
        let mut acc = first.values.clone();
        let mut n = 1usize;
        for img in iter {
            if !img.same_shape(first) {
                return Err(Error::shape(
                    format!("{}x{}", first.height, first.width),
                    format!("{}x{}", img.height, img.width),
                ));
            }
            for (a, v) in acc.iter_mut().zip(&img.values) {
                *a += v;
            }
            n += 1;
        }
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(ImageGrid::from_unclipped(first.height, first.width, acc))
    }

    /// 8-bit quantization `i -> round(255 i)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width {
            return Err(Error::shape(height * width, bytes.len()));
        }
        Ok(Self {
            height,
            width,
            values: bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        })
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        write_pgm(path, self.width, self.height, &self.to_bytes())
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let (w, h, bytes) = read_pgm(path)?;
        Self::from_bytes(h, w, &bytes)
    }
}

/// Pixels altered by a confounder (its footprint).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfounderMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    count: usize,
}

impl ConfounderMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(height * width, bits.len()));
        }
        let count = bits.iter().filter(|b| **b).count();
        Ok(Self {
            height,
            width,
            bits,
            count,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
            count: 0,
        }
    }

    pub(crate) fn set(&mut self, row: usize, col: usize) {
        let i = row * self.width + col;
        if !self.bits[i] {
            self.bits[i] = true;
            self.count += 1;
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    /// Row-major indices of masked pixels.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter_map(|(i, b)| b.then_some(i))
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_pgm(path, self.width, self.height, &bytes)
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let (w, h, bytes) = read_pgm(path)?;
        let mut bits = Vec::with_capacity(bytes.len());
        for b in bytes {
            match b {
                0 => bits.push(false),
                255 => bits.push(true),
                other => return Err(Error::format(path, format!("mask byte {other} not in {{0,255}}"))),
            }
        }
        Self::new(h, w, bits)
    }
}

/// Writes a binary graymap with maxval 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    if bytes.len() != width * height {
        return Err(Error::shape(width * height, bytes.len()));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads a binary graymap (P5, maxval <= 255). Returns `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let data = std::fs::read(path)?;
    parse_pgm(&data).map_err(|msg| Error::format(path, msg))
}

fn parse_pgm(data: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    if !data.starts_with(b"P5") {
        return Err("missing P5 magic".into());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments between header tokens
        loop {
            match data.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while data.get(pos).is_some_and(|c| *c != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while data.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("expected a number in header".into());
        }
        *field = std::str::from_utf8(&data[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("header number out of range")?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte before the raster
    if !data.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing separator before raster".into());
    }
    pos += 1;
    let raster = &data[pos..];
    if raster.len() < width * height {
        return Err(format!(
            "raster holds {} bytes, expected {}",
            raster.len(),
            width * height
        ));
    }
    let mut bytes = raster[..width * height].to_vec();
    if maxval != 255 {
        for b in &mut bytes {
            *b = ((f64::from(*b) * 255.0) / maxval as f64).round() as u8;
        }
    }
    Ok((width, height, bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rule() {
        let img = ImageGrid::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(img.to_bytes(), vec![0, 128, 255]);
        let back = ImageGrid::from_bytes(1, 3, &img.to_bytes()).unwrap();
        assert_eq!(back.values()[1], 128.0 / 255.0);
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(ImageGrid::new(1, 2, vec![0.2, 1.5]).is_err());
        assert!(ImageGrid::new(2, 2, vec![0.2; 3]).is_err());
    }

    #[test]
    fn pgm_header_with_comment() {
        let mut data = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        data.extend_from_slice(&[7, 9]);
        assert_eq!(parse_pgm(&data).unwrap(), (2, 1, vec![7, 9]));
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x01").is_err());
    }

    #[test]
    fn pgm_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let img = ImageGrid::new(2, 3, vec![0.0, 0.1, 0.2, 0.3, 0.4, 1.0]).unwrap();
        img.save_pgm(&path).unwrap();
        let back = ImageGrid::load_pgm(&path).unwrap();
        assert_eq!(back.height(), 2);
        for (a, b) in img.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let mut mask = ConfounderMask::empty(2, 3);
        mask.set(1, 2);
        mask.save_pgm(&path).unwrap();
        assert_eq!(ConfounderMask::load_pgm(&path).unwrap(), mask);
    }
}
