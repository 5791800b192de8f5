use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DataError, Result};
use crate::{Landmark, LandmarkSet, Point};

/// Which source points are averaged into each canonical landmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    /// Number of points per record in the source format.
    pub n_points: usize,
    pub groups: BTreeMap<Landmark, Vec<usize>>,
}

impl GroupSpec {
    /// Default grouping for the 194-point HELEN layout.
    ///
    /// The index sets are defined here, not taken from a published table:
    /// jaw 0–40 (chin = 19–21), nose 41–57, outer lip contour 58–85 with the
    /// mouth corners at 58 and 71, inner lip 86–113, eyes 114–133 and 134–153.
    /// The mouth centre averages the upper and lower outer-lip midpoints.
    /// Edit or replace via a JSON file for other conventions.
    pub fn helen_default() -> Self {
        let mut groups = BTreeMap::new();
        groups.insert(Landmark::ChinC, vec![19, 20, 21]);
        groups.insert(Landmark::NoseC, (41..58).collect());
        groups.insert(Landmark::MouthL, vec![58]);
        groups.insert(Landmark::MouthR, vec![71]);
        groups.insert(Landmark::MouthC, vec![64, 65, 77, 78]);
        groups.insert(Landmark::EyeL, (114..134).collect());
        groups.insert(Landmark::EyeR, (134..154).collect());
        Self { n_points: 194, groups }
    }

    /// One source point per canonical landmark, in canonical order.
    pub fn identity7() -> Self {
        Self {
            n_points: 7,
            groups: Landmark::ALL.iter().map(|&l| (l, vec![l.index()])).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(DataError::InvalidGroupSpec("no groups".into()));
        }
        for (l, idx) in &self.groups {
            if idx.is_empty() {
                return Err(DataError::InvalidGroupSpec(format!("group {l} is empty")));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= self.n_points) {
                return Err(DataError::IndexOutOfRange {
                    landmark: l.to_string(),
                    index: bad,
                    n_points: self.n_points,
                });
            }
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let spec: GroupSpec = serde_json::from_str(&text).map_err(|e| DataError::Parse {
            path: path.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// Averages each group; a landmark is omitted when any of its points is
    /// missing.
    pub fn apply(&self, points: &[Option<Point>]) -> LandmarkSet {
        let mut out = LandmarkSet::new();
        for (&l, idx) in &self.groups {
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            let mut sum = Point::default();
            let mut ok = true;
            for &i in &sorted {
                match points.get(i).copied().flatten() {
                    Some(p) => sum = sum + p,
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                let n = sorted.len() as f64;
                out.set(l, Point::new(sum.x / n, sum.y / n));
            }
        }
        out
    }
}
