use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DescriptorError, LBP_BINS, SIFT_DIM};

/// Patch side as a fraction of the 128px face width.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatchSize(f64);

impl PatchSize {
    pub fn eighths(n: u8) -> Self {
        Self(n as f64 / 8.0)
    }

    pub fn from_fraction(f: f64) -> Result<Self, DescriptorError> {
        if f > 0.0 && f <= 1.0 {
            Ok(Self(f))
        } else {
            Err(DescriptorError::InvalidConfig(format!("patch size {f} not in (0, 1]")))
        }
    }

    /// Maps the rendered sizes used in published result tables
    /// (1.2, 2.5, 3.8, 5.0) onto the eighths grid.
    pub fn from_table_value(v: f64) -> Result<Self, DescriptorError> {
        const TABLE: [(f64, u8); 4] = [(1.2, 1), (2.5, 2), (3.8, 3), (5.0, 4)];
        TABLE
            .iter()
            .find(|(t, _)| (t - v).abs() < 1e-9)
            .map(|&(_, n)| Self::eighths(n))
            .ok_or_else(|| DescriptorError::InvalidConfig(format!("unknown table patch size {v}")))
    }

    pub fn fraction(self) -> f64 {
        self.0
    }
}

impl fmt::Display for PatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = self.0 * 8.0;
        if (e - e.round()).abs() < 1e-12 {
            write!(f, "{}/8", e.round() as u32)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for PatchSize {
    type Err = DescriptorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DescriptorError::InvalidConfig(format!("cannot parse patch size `{s}`"));
        let f = match s.split_once('/') {
            Some((n, d)) => {
                let n: f64 = n.trim().parse().map_err(|_| bad())?;
                let d: f64 = d.trim().parse().map_err(|_| bad())?;
                n / d
            }
            None => s.trim().parse().map_err(|_| bad())?,
        };
        Self::from_fraction(f)
    }
}

pub const PAPER_PATCH_SIZES: [u8; 4] = [1, 2, 3, 4];
pub const PAPER_CELLS: [usize; 4] = [1, 2, 4, 8];
pub const PAPER_HOG_ORIENTATIONS: [usize; 2] = [4, 8];
pub const PAPER_LBP_RADII: [usize; 4] = [1, 2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DescriptorKind {
    Hog { orientations: usize },
    Lbp { radius: usize },
    Sift,
}

impl DescriptorKind {
    pub fn name(&self) -> &'static str {
        match self {
            DescriptorKind::Hog { .. } => "hog",
            DescriptorKind::Lbp { .. } => "lbp",
            DescriptorKind::Sift => "sift",
        }
    }
}

/// One descriptor over a square grid of `cells_per_side`² cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorConfig {
    #[serde(flatten)]
    pub kind: DescriptorKind,
    pub patch_size: PatchSize,
    pub cells_per_side: usize,
}

impl DescriptorConfig {
    pub fn hog(patch_size: PatchSize, cells_per_side: usize, orientations: usize) -> Self {
        Self {
            kind: DescriptorKind::Hog { orientations },
            patch_size,
            cells_per_side,
        }
    }

    pub fn lbp(patch_size: PatchSize, cells_per_side: usize, radius: usize) -> Self {
        Self {
            kind: DescriptorKind::Lbp { radius },
            patch_size,
            cells_per_side,
        }
    }

    pub fn sift(patch_size: PatchSize, cells_per_side: usize) -> Self {
        Self {
            kind: DescriptorKind::Sift,
            patch_size,
            cells_per_side,
        }
    }

    /// Output length; a pure function of the configuration.
    pub fn dim(&self) -> usize {
        let cells = self.cells_per_side * self.cells_per_side;
        match self.kind {
            DescriptorKind::Hog { orientations } => cells * orientations,
            DescriptorKind::Lbp { .. } => cells * LBP_BINS,
            DescriptorKind::Sift => cells * SIFT_DIM,
        }
    }

    pub fn validate(&self) -> Result<(), DescriptorError> {
        let bad = |m: String| Err(DescriptorError::InvalidConfig(m));
        if self.cells_per_side == 0 {
            return bad("cells_per_side must be >= 1".into());
        }
        match self.kind {
            DescriptorKind::Hog { orientations: 0 } => bad("orientations must be >= 1".into()),
            DescriptorKind::Lbp { radius: 0 } => bad("LBP radius must be >= 1".into()),
            _ => Ok(()),
        }
    }

    /// Every configuration of the tuning grids (patch sizes, cells,
    /// orientations, radii).
    pub fn paper_grid() -> Vec<DescriptorConfig> {
        let mut out = Vec::new();
        for &s in &PAPER_PATCH_SIZES {
            let size = PatchSize::eighths(s);
            for &c in &PAPER_CELLS {
                for &o in &PAPER_HOG_ORIENTATIONS {
                    out.push(Self::hog(size, c, o));
                }
                for &r in &PAPER_LBP_RADII {
                    out.push(Self::lbp(size, c, r));
                }
                out.push(Self::sift(size, c));
            }
        }
        out
    }
}

/// Compact text form: `sift:1/8:4`, `hog:3/8:4:8` (orientations last),
/// `lbp:3/8:8:3` (radius last).
impl fmt::Display for DescriptorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            DescriptorKind::Hog { orientations } => {
                write!(f, "hog:{}:{}:{}", self.patch_size, self.cells_per_side, orientations)
            }
            DescriptorKind::Lbp { radius } => {
                write!(f, "lbp:{}:{}:{}", self.patch_size, self.cells_per_side, radius)
            }
            DescriptorKind::Sift => write!(f, "sift:{}:{}", self.patch_size, self.cells_per_side),
        }
    }
}

impl FromStr for DescriptorConfig {
    type Err = DescriptorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DescriptorError::InvalidConfig(format!("cannot parse descriptor `{s}`"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<usize, DescriptorError> {
            parts.get(i).ok_or_else(bad)?.trim().parse().map_err(|_| bad())
        };
        let size: PatchSize = parts.get(1).ok_or_else(bad)?.parse()?;
        let cfg = match (parts[0].to_ascii_lowercase().as_str(), parts.len()) {
            ("hog", 4) => Self::hog(size, num(2)?, num(3)?),
            ("lbp", 4) => Self::lbp(size, num(2)?, num(3)?),
            ("sift", 3) => Self::sift(size, num(2)?),
            _ => return Err(bad()),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
