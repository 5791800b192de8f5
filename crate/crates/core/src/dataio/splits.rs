use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, DataError, Result};
use crate::rng;

pub const MIN_SPLIT_RECORDS: usize = 10;

/// Keeps records whose absolute pose angles are strictly below the limits.
/// Records without pose information are dropped when any limit is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseFilter {
    pub max_abs_yaw: Option<f64>,
    pub max_abs_pitch: Option<f64>,
    pub max_abs_roll: Option<f64>,
}

impl PoseFilter {
    /// |yaw| < 15° and |pitch| < 15°.
    pub fn frontal() -> Self {
        Self {
            max_abs_yaw: Some(15.0),
            max_abs_pitch: Some(15.0),
            max_abs_roll: None,
        }
    }

    /// |roll| < 60°, used for the fallback application.
    pub fn roll60() -> Self {
        Self {
            max_abs_yaw: None,
            max_abs_pitch: None,
            max_abs_roll: Some(60.0),
        }
    }

    pub fn accepts(&self, r: &AnnotationRecord) -> bool {
        let limits = [self.max_abs_yaw, self.max_abs_pitch, self.max_abs_roll];
        if limits.iter().all(Option::is_none) {
            return true;
        }
        let Some(p) = r.pose else { return false };
        let within = |lim: Option<f64>, v: f64| lim.is_none_or(|l| v.abs() < l);
        within(self.max_abs_yaw, p.yaw) && within(self.max_abs_pitch, p.pitch) && within(self.max_abs_roll, p.roll)
    }
}

/// Disjoint train/validation/test face ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<PoseFilter>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitManifest {
    pub fn len(&self) -> usize {
        self.train_ids.len() + self.val_ids.len() + self.test_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pairwise disjointness.
    pub fn check(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.train_ids.iter().chain(&self.val_ids).chain(&self.test_ids) {
            if !seen.insert(id) {
                return Err(DataError::InvalidManifest(format!("face `{id}` appears twice")));
            }
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let m: SplitManifest = serde_json::from_str(&text).map_err(|e| DataError::Parse {
            path: path.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        m.check()?;
        Ok(m)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serialises"))
            .map_err(|e| DataError::io(path, e))
    }
}

fn round_share(n: usize, percent: usize) -> usize {
    (n * percent + 50) / 100
}

/// Filters, then shuffles ids (sorted first, so input order is irrelevant)
/// and cuts 80/10/10 contiguously; the test part takes the remainder.
pub fn make_splits(records: &[AnnotationRecord], seed: u64, filter: Option<&PoseFilter>) -> Result<SplitManifest> {
    let mut ids: Vec<String> = records
        .iter()
        .filter(|r| filter.is_none_or(|f| f.accepts(r)))
        .map(|r| r.face_id.clone())
        .collect();
    if ids.len() < MIN_SPLIT_RECORDS {
        return Err(DataError::TooFewRecords {
            got: ids.len(),
            required: MIN_SPLIT_RECORDS,
        });
    }
    ids.sort();
    ids.shuffle(&mut rng::seeded(seed));
    let n = ids.len();
    let n_train = round_share(n, 80);
    let n_val = round_share(n, 10);
    let test_ids = ids.split_off(n_train + n_val);
    let val_ids = ids.split_off(n_train);
    let m = SplitManifest {
        seed,
        filter: filter.copied(),
        train_ids: ids,
        val_ids,
        test_ids,
    };
    m.check()?;
    Ok(m)
}

/// For datasets that ship a fixed train/test partition: the validation set
/// (10% of all images) is split off the training partition.
pub fn split_from_partition(train: &[String], test: &[String], seed: u64) -> Result<SplitManifest> {
    let total = train.len() + test.len();
    let n_val = round_share(total, 10);
    if train.len() <= n_val {
        return Err(DataError::TooFewRecords {
            got: train.len(),
            required: n_val + 1,
        });
    }
    let mut ids = train.to_vec();
    ids.sort();
    ids.shuffle(&mut rng::seeded(seed));
    let val_ids = ids.split_off(train.len() - n_val);
    let m = SplitManifest {
        seed,
        filter: None,
        train_ids: ids,
        val_ids,
        test_ids: test.to_vec(),
    };
    m.check()?;
    Ok(m)
}
