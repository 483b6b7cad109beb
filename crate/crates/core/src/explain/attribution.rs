use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::write_pgm;

/// Attribution method. The explained quantity is always the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Gradient,
    Guided,
    GradCam,
    Lime,
    Shap,
}

/// Output the attribution is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Logit,
    Probability,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Gradient,
        Method::Guided,
        Method::GradCam,
        Method::Lime,
        Method::Shap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gradient => "gradient",
            Method::Guided => "guided",
            Method::GradCam => "gradcam",
            Method::Lime => "lime",
            Method::Shap => "shap",
        }
    }

    /// Gradient methods explain the logit; perturbation methods the
    /// bounded probability.
    pub fn target(self) -> Target {
        match self {
            Method::Gradient | Method::Guided | Method::GradCam => Target::Logit,
            Method::Lime | Method::Shap => Target::Probability,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "guided_backprop" | "guided-backprop" => return Ok(Method::Guided),
            "grad_cam" | "grad-cam" => return Ok(Method::GradCam),
            "shap_partition" | "partition" => return Ok(Method::Shap),
            _ => {}
        }
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Param(format!("unknown explainer '{s}'")))
    }
}

/// Per-pixel relevance for the positive class, same shape as the image.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    method: Method,
}

impl AttributionMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, method: Method) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(height * width, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                msg: format!("{method} attribution has non-finite values"),
                condition: f64::INFINITY,
            });
        }
        Ok(Self {
            height,
            width,
            values,
            method,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn target(&self) -> Target {
        self.method.target()
    }

    /// Min-max normalized bytes; a constant map renders as 128.
    pub fn to_gray_bytes(&self) -> Vec<u8> {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        if !(hi > lo) {
            return vec![128; self.values.len()];
        }
        self.values
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        write_pgm(path, self.width, self.height, &self.to_gray_bytes())
    }

    /// `"<method> <H> <W>\n"` followed by `H*W` little-endian f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{} {} {}\n", self.method, self.height, self.width).into_bytes();
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(data: &[u8], path: &Path) -> Result<Self> {
        let nl = data
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::format(path, "missing header line"))?;
        let header = std::str::from_utf8(&data[..nl]).map_err(|_| Error::format(path, "header is not utf-8"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let [method, h, w] = parts.as_slice() else {
            return Err(Error::format(path, format!("bad header '{header}'")));
        };
        let method: Method = method.parse()?;
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format(path, format!("bad dimension '{s}'")))
        };
        let (h, w) = (parse(h)?, parse(w)?);
        let raw = &data[nl + 1..];
        if raw.len() != h * w * 8 {
            return Err(Error::format(
                path,
                format!("expected {} value bytes, found {}", h * w * 8, raw.len()),
            ));
        }
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::new(h, w, values, method)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, path)
    }
}
