//! Descriptor presets per landmark.
//!
//! `paper-aflw` and `paper-helen` are the best descriptor combinations
//! reported for the two datasets, each descriptor using its best single
//! configuration. Table sizes 1.2/2.5/3.8/5.0 map to 1/8..4/8 of the face.

use std::collections::BTreeMap;

use crate::descriptors::{DescriptorConfig, DescriptorKind, PatchSize};
use crate::{Error, Landmark, Result};

pub type Preset = BTreeMap<Landmark, Vec<DescriptorConfig>>;

pub const PRESET_NAMES: [&str; 3] = ["paper-aflw", "paper-helen", "sift-small"];

fn parse(list: &[&str]) -> Vec<DescriptorConfig> {
    list.iter().map(|s| s.parse().expect("valid preset descriptor")).collect()
}

fn preset(rows: [(Landmark, &[&str]); 7]) -> Preset {
    rows.into_iter().map(|(l, cfgs)| (l, parse(cfgs))).collect()
}

pub fn paper_aflw() -> Preset {
    use Landmark::*;
    preset([
        (ChinC, &["hog:3/8:8:4", "sift:2/8:4"]),
        (EyeL, &["sift:1/8:4"]),
        (EyeR, &["hog:3/8:8:4", "sift:1/8:4"]),
        (MouthC, &["sift:1/8:4"]),
        (MouthL, &["hog:4/8:8:4", "sift:3/8:4", "lbp:3/8:2:4"]),
        (MouthR, &["sift:2/8:4"]),
        (NoseC, &["sift:1/8:2", "lbp:2/8:4:3"]),
    ])
}

pub fn paper_helen() -> Preset {
    use Landmark::*;
    preset([
        (ChinC, &["sift:2/8:4"]),
        (EyeL, &["hog:4/8:4:4", "lbp:2/8:4:2"]),
        (EyeR, &["hog:4/8:8:4", "lbp:3/8:4:4"]),
        (MouthC, &["sift:2/8:4", "lbp:4/8:8:4"]),
        (MouthL, &["hog:3/8:8:4", "sift:1/8:4"]),
        (MouthR, &["sift:3/8:4"]),
        (NoseC, &["hog:4/8:4:8", "sift:2/8:4", "lbp:4/8:4:3"]),
    ])
}

/// A small SIFT descriptor (1/8 of the face, 2x2 cells) for every landmark;
/// cheap enough for quick experiments.
pub fn sift_small() -> Preset {
    Landmark::ALL.into_iter().map(|l| (l, parse(&["sift:1/8:2"]))).collect()
}

pub fn by_name(name: &str) -> Result<Preset> {
    match name {
        "paper-aflw" => Ok(paper_aflw()),
        "paper-helen" => Ok(paper_helen()),
        "sift-small" => Ok(sift_small()),
        other => Err(Error::InvalidArgument(format!(
            "unknown descriptor preset `{other}` (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Which dataset's single-descriptor table to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableDataset {
    Aflw,
    Helen,
}

/// Best single configuration per descriptor family, as `(sift, hog, lbp)`,
/// written in the tables' own units (size ×10 of the face fraction).
pub fn table_best(dataset: TableDataset, landmark: Landmark) -> [DescriptorConfig; 3] {
    use Landmark::*;
    // (sift size, sift cells, hog orientations, hog size, hog cells, lbp radius, lbp size, lbp cells)
    type Row = (f64, usize, usize, f64, usize, usize, f64, usize);
    let row: Row = match (dataset, landmark) {
        (TableDataset::Aflw, ChinC) => (2.5, 4, 4, 3.8, 8, 3, 3.8, 8),
        (TableDataset::Aflw, EyeL) => (1.2, 4, 8, 2.5, 4, 2, 2.5, 8),
        (TableDataset::Aflw, EyeR) => (1.2, 4, 4, 3.8, 8, 3, 2.5, 8),
        (TableDataset::Aflw, MouthC) => (1.2, 4, 8, 3.8, 4, 3, 2.5, 8),
        (TableDataset::Aflw, MouthL) => (3.8, 4, 4, 5.0, 8, 4, 3.8, 2),
        (TableDataset::Aflw, MouthR) => (2.5, 4, 8, 1.2, 2, 4, 2.5, 8),
        (TableDataset::Aflw, NoseC) => (1.2, 2, 8, 2.5, 1, 3, 2.5, 4),
        (TableDataset::Helen, ChinC) => (2.5, 4, 4, 5.0, 8, 3, 2.5, 8),
        (TableDataset::Helen, EyeL) => (3.8, 4, 4, 5.0, 4, 2, 2.5, 4),
        (TableDataset::Helen, EyeR) => (1.2, 4, 4, 5.0, 8, 4, 3.8, 4),
        (TableDataset::Helen, MouthC) => (2.5, 4, 8, 5.0, 8, 4, 5.0, 8),
        (TableDataset::Helen, MouthL) => (1.2, 4, 4, 3.8, 8, 4, 2.5, 8),
        (TableDataset::Helen, MouthR) => (3.8, 4, 8, 3.8, 4, 3, 2.5, 8),
        (TableDataset::Helen, NoseC) => (2.5, 4, 8, 5.0, 4, 3, 5.0, 4),
    };
    let size = |v: f64| PatchSize::from_table_value(v).expect("table size");
    [
        DescriptorConfig::sift(size(row.0), row.1),
        DescriptorConfig::hog(size(row.3), row.4, row.2),
        DescriptorConfig::lbp(size(row.6), row.7, row.5),
    ]
}

/// Picks the named descriptor families from [`table_best`].
pub fn table_combination(dataset: TableDataset, landmark: Landmark, kinds: &[&str]) -> Vec<DescriptorConfig> {
    table_best(dataset, landmark)
        .into_iter()
        .filter(|c| {
            let name = match c.kind {
                DescriptorKind::Hog { .. } => "hog",
                DescriptorKind::Lbp { .. } => "lbp",
                DescriptorKind::Sift => "sift",
            };
            kinds.contains(&name)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_agree_with_tables() {
        use Landmark::*;
        let combos_aflw: [(Landmark, &[&str]); 7] = [
            (ChinC, &["hog", "sift"]),
            (EyeL, &["sift"]),
            (EyeR, &["hog", "sift"]),
            (MouthC, &["sift"]),
            (MouthL, &["hog", "sift", "lbp"]),
            (MouthR, &["sift"]),
            (NoseC, &["sift", "lbp"]),
        ];
        let p = paper_aflw();
        for (l, kinds) in combos_aflw {
            let mut want = table_combination(TableDataset::Aflw, l, kinds);
            let mut got = p[&l].clone();
            want.sort_by_key(|c| c.to_string());
            got.sort_by_key(|c| c.to_string());
            assert_eq!(got, want, "{l}");
        }
        let combos_helen: [(Landmark, &[&str]); 7] = [
            (ChinC, &["sift"]),
            (EyeL, &["hog", "lbp"]),
            (EyeR, &["hog", "lbp"]),
            (MouthC, &["sift", "lbp"]),
            (MouthL, &["hog", "sift"]),
            (MouthR, &["sift"]),
            (NoseC, &["hog", "sift", "lbp"]),
        ];
        let p = paper_helen();
        for (l, kinds) in combos_helen {
            let mut want = table_combination(TableDataset::Helen, l, kinds);
            let mut got = p[&l].clone();
            want.sort_by_key(|c| c.to_string());
            got.sort_by_key(|c| c.to_string());
            assert_eq!(got, want, "{l}");
        }
    }

    #[test]
    fn table_rows_expressible() {
        let [sift, _, _] = table_best(TableDataset::Aflw, Landmark::EyeR);
        assert_eq!(sift, "sift:1/8:4".parse().unwrap());
        let [_, hog, _] = table_best(TableDataset::Aflw, Landmark::MouthC);
        assert_eq!(hog, "hog:3/8:4:8".parse().unwrap());
        let [_, _, lbp] = table_best(TableDataset::Aflw, Landmark::ChinC);
        assert_eq!(lbp, "lbp:3/8:8:3".parse().unwrap());
    }

    #[test]
    fn unknown_preset() {
        assert!(by_name("nope").is_err());
        for n in PRESET_NAMES {
            assert_eq!(by_name(n).unwrap().len(), 7);
        }
    }
}
