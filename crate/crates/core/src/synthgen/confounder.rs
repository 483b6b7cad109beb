//! The three injected artefacts: corner tag, vertical hyperintense lines and
//! an oblique lower occlusion.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::image::{ConfounderMask, ImageGrid};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum ConfounderKind {
    /// Checkered glyph anchored `offset` pixels from the left and bottom edges.
    Tag { offset: usize, size: usize, intensity: f64 },
    /// `lines` full-height vertical stripes of `width` pixels, boosted by `boost`.
    Hyperintensity { lines: usize, width: usize, boost: f64 },
    /// Everything below `row = intercept + slope * (col - center)` is set to
    /// `intensity`. `intercept` is a range of fractions of the image height.
    Obstruction {
        intercept: (f64, f64),
        slope: (f64, f64),
        intensity: f64,
    },
}

impl ConfounderKind {
    pub fn tag() -> Self {
        ConfounderKind::Tag {
            offset: 4,
            size: 8,
            intensity: 1.0,
        }
    }

    pub fn hyperintensity() -> Self {
        ConfounderKind::Hyperintensity {
            lines: 3,
            width: 1,
            boost: 0.5,
        }
    }

    pub fn obstruction() -> Self {
        ConfounderKind::Obstruction {
            intercept: (2.0 / 3.0, 5.0 / 6.0),
            slope: (-0.3, 0.3),
            intensity: 0.05,
        }
    }

    /// Short name used in configs, CLI flags and file names.
    pub fn name(&self) -> &'static str {
        match self {
            ConfounderKind::Tag { .. } => "tag",
            ConfounderKind::Hyperintensity { .. } => "lines",
            ConfounderKind::Obstruction { .. } => "obstruction",
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        match *self {
            ConfounderKind::Tag {
                offset,
                size,
                intensity,
            } => {
                if size == 0 || offset + size > height || offset + size > width {
                    return Err(Error::Param(format!(
                        "tag of size {size} at offset {offset} does not fit {height}x{width}"
                    )));
                }
                if !(0.0..=1.0).contains(&intensity) {
                    return Err(Error::Param("tag intensity outside [0,1]".into()));
                }
            }
            ConfounderKind::Hyperintensity { lines, width: w, boost } => {
                if lines == 0 || w == 0 || lines > width / w {
                    return Err(Error::Param(format!(
                        "{lines} lines of width {w} do not fit in {width} columns"
                    )));
                }
                if !(boost > 0.0) {
                    return Err(Error::Param("line boost must be positive".into()));
                }
            }
            ConfounderKind::Obstruction {
                intercept,
                slope,
                intensity,
            } => {
                if !(0.0 < intercept.0 && intercept.0 <= intercept.1 && intercept.1 < 1.0) {
                    return Err(Error::Param("obstruction intercept range must lie in (0,1)".into()));
                }
                if slope.0 > slope.1 || !slope.0.is_finite() || !slope.1.is_finite() {
                    return Err(Error::Param("invalid obstruction slope range".into()));
                }
                if !(0.0..=1.0).contains(&intensity) {
                    return Err(Error::Param("obstruction intensity outside [0,1]".into()));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ConfounderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConfounderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tag" => Ok(Self::tag()),
            "lines" | "hyperintensity" => Ok(Self::hyperintensity()),
            "obstruction" => Ok(Self::obstruction()),
            other => Err(Error::Param(format!(
                "unknown confounder '{other}' (expected tag|lines|obstruction)"
            ))),
        }
    }
}

/// Injects the artefact and returns the altered image with its footprint.
/// Pixels outside the footprint are untouched.
pub fn inject_confounder(
    image: &ImageGrid,
    kind: &ConfounderKind,
    rng: &mut Rng,
) -> Result<(ImageGrid, ConfounderMask)> {
    let (h, w) = (image.height(), image.width());
    kind.validate(h, w)?;
    let mut out = image.clone();
    let mut mask = ConfounderMask::empty(h, w);
    match *kind {
        ConfounderKind::Tag {
            offset,
            size,
            intensity,
        } => {
            let top = h - offset - size;
            let cell = (size / 4).max(1);
            let vals = out.values_mut();
            for r in 0..size {
                for c in 0..size {
                    let bright = ((r / cell) + (c / cell)) % 2 == 0;
                    let v = if bright { intensity } else { 0.5 * intensity };
                    vals[(top + r) * w + offset + c] = v;
                    mask.set(top + r, offset + c);
                }
            }
        }
        ConfounderKind::Hyperintensity {
            lines,
            width: lw,
            boost,
        } => {
            let mut slots = sample(rng, w / lw, lines).into_vec();
            slots.sort_unstable();
            let vals = out.values_mut();
            for slot in slots {
                for c in slot * lw..(slot + 1) * lw {
                    for r in 0..h {
                        let v = &mut vals[r * w + c];
                        *v = (*v + boost).min(1.0);
                        mask.set(r, c);
                    }
                }
            }
        }
        ConfounderKind::Obstruction {
            intercept,
            slope,
            intensity,
        } => {
            let lo = (intercept.0 * h as f64).round() as usize;
            let hi = (intercept.1 * h as f64).round() as usize;
            let row0 = if hi > lo { rng.random_range(lo..=hi) } else { lo } as f64;
            let m = if slope.1 > slope.0 {
                rng.random_range(slope.0..=slope.1)
            } else {
                slope.0
            };
            let center = (w as f64 - 1.0) / 2.0;
            let vals = out.values_mut();
            for c in 0..w {
                let boundary = row0 + m * (c as f64 - center);
                for r in 0..h {
                    if r as f64 >= boundary {
                        vals[r * w + c] = intensity;
                        mask.set(r, c);
                    }
                }
            }
        }
    }
    if mask.count() == 0 {
        return Err(Error::Internal(format!("{kind} injection produced an empty footprint")));
    }
    Ok((out, mask))
}
