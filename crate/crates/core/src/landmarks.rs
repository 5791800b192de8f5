//! Named facial landmarks and sets of (possibly missing) landmark positions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A 2D point in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        Ok(Point::new(x, y))
    }
}

/// The seven canonical landmarks. "Left" is image-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Landmark {
    EyeL,
    EyeR,
    NoseC,
    MouthL,
    MouthC,
    MouthR,
    ChinC,
}

impl Landmark {
    pub const ALL: [Landmark; 7] = [
        Landmark::EyeL,
        Landmark::EyeR,
        Landmark::NoseC,
        Landmark::MouthL,
        Landmark::MouthC,
        Landmark::MouthR,
        Landmark::ChinC,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn name(self) -> &'static str {
        match self {
            Landmark::EyeL => "eyeL",
            Landmark::EyeR => "eyeR",
            Landmark::NoseC => "noseC",
            Landmark::MouthL => "mouthL",
            Landmark::MouthC => "mouthC",
            Landmark::MouthR => "mouthR",
            Landmark::ChinC => "chinC",
        }
    }

    /// The landmark with left and right exchanged (identity for central ones).
    pub const fn mirrored(self) -> Landmark {
        match self {
            Landmark::EyeL => Landmark::EyeR,
            Landmark::EyeR => Landmark::EyeL,
            Landmark::MouthL => Landmark::MouthR,
            Landmark::MouthR => Landmark::MouthL,
            other => other,
        }
    }
}

impl fmt::Display for Landmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown landmark name `{0}`")]
pub struct UnknownLandmark(pub String);

impl FromStr for Landmark {
    type Err = UnknownLandmark;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Landmark::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| UnknownLandmark(s.to_string()))
    }
}

impl Serialize for Landmark {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Landmark {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Positions for the canonical landmarks; missing annotations are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LandmarkSet {
    points: [Option<Point>; 7],
}

impl LandmarkSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (Landmark, Point)>>(pairs: I) -> Self {
        let mut set = Self::new();
        for (l, p) in pairs {
            set.set(l, p);
        }
        set
    }

    pub fn get(&self, l: Landmark) -> Option<Point> {
        self.points[l.index()]
    }

    pub fn set(&mut self, l: Landmark, p: Point) {
        self.points[l.index()] = Some(p);
    }

    pub fn remove(&mut self, l: Landmark) {
        self.points[l.index()] = None;
    }

    pub fn contains(&self, l: Landmark) -> bool {
        self.points[l.index()].is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Landmark, Point)> + '_ {
        Landmark::ALL
            .into_iter()
            .filter_map(|l| self.get(l).map(|p| (l, p)))
    }

    pub fn len(&self) -> usize {
        self.points.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Applies `f` to every present point.
    pub fn map(&self, mut f: impl FnMut(Landmark, Point) -> Point) -> LandmarkSet {
        let mut out = *self;
        for l in Landmark::ALL {
            if let Some(p) = self.get(l) {
                out.set(l, f(l, p));
            }
        }
        out
    }

    /// Restricts the set to the given landmarks.
    pub fn subset(&self, keep: &[Landmark]) -> LandmarkSet {
        LandmarkSet::from_pairs(keep.iter().filter_map(|&l| self.get(l).map(|p| (l, p))))
    }

    /// Exchanges image-left and image-right names.
    pub fn mirrored_names(&self) -> LandmarkSet {
        LandmarkSet::from_pairs(self.iter().map(|(l, p)| (l.mirrored(), p)))
    }

    pub fn eyes(&self) -> Option<(Point, Point)> {
        Some((self.get(Landmark::EyeL)?, self.get(Landmark::EyeR)?))
    }
}

impl Serialize for LandmarkSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<&str, Point> = self.iter().map(|(l, p)| (l.name(), p)).collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LandmarkSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, Option<Point>>::deserialize(d)?;
        let mut set = LandmarkSet::new();
        for (name, p) in map {
            let l: Landmark = name.parse().map_err(serde::de::Error::custom)?;
            if let Some(p) = p {
                if !p.is_finite() {
                    return Err(serde::de::Error::custom(format!(
                        "non-finite coordinate for {name}"
                    )));
                }
                set.set(l, p);
            }
        }
        Ok(set)
    }
}
