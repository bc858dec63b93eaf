//! Key-object references of the form `<c1,CAM_FRONT,714.3,503.6>`.
//!
//! A tag names an object by a per-frame identifier, the camera it was seen
//! in, and the pixel center of its 2D box in that camera's 1600x900 image.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::{IMAGE_HEIGHT, IMAGE_WIDTH};

/// The six surround-view cameras, in the order images are fed to the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Camera {
    #[serde(rename = "CAM_FRONT")]
    Front,
    #[serde(rename = "CAM_FRONT_LEFT")]
    FrontLeft,
    #[serde(rename = "CAM_FRONT_RIGHT")]
    FrontRight,
    #[serde(rename = "CAM_BACK")]
    Back,
    #[serde(rename = "CAM_BACK_LEFT")]
    BackLeft,
    #[serde(rename = "CAM_BACK_RIGHT")]
    BackRight,
}

impl Camera {
    pub const ALL: [Camera; 6] = [
        Camera::Front,
        Camera::FrontLeft,
        Camera::FrontRight,
        Camera::Back,
        Camera::BackLeft,
        Camera::BackRight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Camera::Front => "CAM_FRONT",
            Camera::FrontLeft => "CAM_FRONT_LEFT",
            Camera::FrontRight => "CAM_FRONT_RIGHT",
            Camera::Back => "CAM_BACK",
            Camera::BackLeft => "CAM_BACK_LEFT",
            Camera::BackRight => "CAM_BACK_RIGHT",
        }
    }

    /// Direction phrase relative to the ego vehicle ("front left", ...).
    pub fn phrase(self) -> &'static str {
        match self {
            Camera::Front => "front",
            Camera::FrontLeft => "front left",
            Camera::FrontRight => "front right",
            Camera::Back => "back",
            Camera::BackLeft => "back left",
            Camera::BackRight => "back right",
        }
    }
}

impl fmt::Display for Camera {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("unknown camera `{0}`")]
pub struct UnknownCamera(pub String);

impl FromStr for Camera {
    type Err = UnknownCamera;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Camera::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownCamera(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum TagError {
    #[error("`{0}` is not a c-identifier (expected `c` followed by a positive integer)")]
    BadId(String),
    #[error(transparent)]
    UnknownCamera(#[from] UnknownCamera),
    #[error("coordinate ({x}, {y}) outside the 1600x900 image")]
    OutOfBounds { x: f64, y: f64 },
    #[error("malformed tag `{0}`")]
    Malformed(String),
}

/// A parsed `<id,CAMERA,x,y>` reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTag {
    pub id: String,
    pub camera: Camera,
    pub x: f64,
    pub y: f64,
}

pub fn is_c_identifier(id: &str) -> bool {
    let Some(digits) = id.strip_prefix('c') else {
        return false;
    };
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) && digits.bytes().any(|b| b != b'0')
}

pub fn in_image_bounds(x: f64, y: f64) -> bool {
    (0.0..=IMAGE_WIDTH).contains(&x) && (0.0..=IMAGE_HEIGHT).contains(&y)
}

impl ObjectTag {
    pub fn new(id: impl Into<String>, camera: Camera, x: f64, y: f64) -> Result<Self, TagError> {
        let id = id.into();
        if !is_c_identifier(&id) {
            return Err(TagError::BadId(id));
        }
        if !in_image_bounds(x, y) {
            return Err(TagError::OutOfBounds { x, y });
        }
        Ok(Self { id, camera, x, y })
    }

    /// Canonical text form with coordinates at one decimal place.
    pub fn serialize(&self) -> String {
        self.to_string()
    }

    pub fn distance(&self, other: &ObjectTag) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }
}

impl fmt::Display for ObjectTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{},{:.1},{:.1}>", self.id, self.camera, self.x, self.y)
    }
}

impl FromStr for ObjectTag {
    type Err = TagError;

    /// Parses exactly one tag; the whole string must be the tag.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match scan_one(s.trim(), 0) {
            Some((end, result)) if end == s.trim().len() => result,
            _ => Err(TagError::Malformed(s.to_string())),
        }
    }
}

impl Serialize for ObjectTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ObjectTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A substring that had tag shape but failed validation.
#[derive(Clone, Debug, PartialEq)]
pub struct RejectedTag {
    pub offset: usize,
    pub raw: String,
    pub error: TagError,
}

/// Result of scanning free text for tags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TagScan {
    /// Accepted tags with their byte offsets, in textual order.
    pub tags: Vec<(usize, ObjectTag)>,
    pub rejected: Vec<RejectedTag>,
}

impl TagScan {
    pub fn into_tags(self) -> Vec<ObjectTag> {
        self.tags.into_iter().map(|(_, t)| t).collect()
    }
}

/// Every tag in `text`, in order. Shape-valid tags with bad fields are
/// dropped; use [`scan_object_tags`] to see them.
pub fn parse_object_tags(text: &str) -> Vec<ObjectTag> {
    scan_object_tags(text).into_tags()
}

pub fn scan_object_tags(text: &str) -> TagScan {
    let mut scan = TagScan::default();
    let mut pos = 0;
    while let Some(rel) = text[pos..].find('<') {
        let start = pos + rel;
        match scan_one(text, start) {
            Some((end, Ok(tag))) => {
                scan.tags.push((start, tag));
                pos = end;
            }
            Some((end, Err(error))) => {
                scan.rejected.push(RejectedTag {
                    offset: start,
                    raw: text[start..end].to_string(),
                    error,
                });
                pos = end;
            }
            None => pos = start + 1,
        }
    }
    scan
}

/// Tries to read a tag starting at the `<` at byte `start`. Returns `None`
/// when the text does not have tag shape at all, otherwise the end offset
/// (one past `>`) and the validated tag.
fn scan_one(text: &str, start: usize) -> Option<(usize, Result<ObjectTag, TagError>)> {
    let rest = text.get(start..)?.strip_prefix('<')?;
    let close = rest.find(['>', '<'])?;
    if rest.as_bytes()[close] != b'>' {
        return None;
    }
    let body = &rest[..close];
    let end = start + 1 + close + 1;

    let fields: Vec<&str> = body.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return None;
    }
    let (id, cam, xs, ys) = (fields[0], fields[1], fields[2], fields[3]);
    let id_shaped = id.starts_with('c') && id[1..].bytes().all(|b| b.is_ascii_digit());
    let cam_shaped = !cam.is_empty() && cam.bytes().all(|b| b.is_ascii_uppercase() || b == b'_');
    if !id_shaped || !cam_shaped || !is_decimal(xs) || !is_decimal(ys) {
        return None;
    }
    let camera = match cam.parse::<Camera>() {
        Ok(c) => c,
        Err(e) => return Some((end, Err(e.into()))),
    };
    // is_decimal guarantees these parse
    let x: f64 = xs.parse().ok()?;
    let y: f64 = ys.parse().ok()?;
    Some((end, ObjectTag::new(id, camera, x, y)))
}

fn is_decimal(s: &str) -> bool {
    let s = s.strip_prefix(['-', '+']).unwrap_or(s);
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s, None),
    };
    let digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    match frac {
        None => !int.is_empty() && digits(int),
        Some(f) => (!int.is_empty() || !f.is_empty()) && digits(int) && digits(f),
    }
}
