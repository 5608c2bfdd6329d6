//! Image transforms used as Q-learning actions, and the named action banks.
//!
//! Conventions:
//!
//! * Output images always keep the input's height, width and channel count.
//! * Positive rotation angles turn the picture counter-clockwise as displayed
//!   (x to the right, y downward), about the center `((w-1)/2, (h-1)/2)`.
//! * Rotations by multiples of 90° are lossless pixel permutations whenever the
//!   rotated grid lands on the original one (always for 180°, for 90°/270° on
//!   square images). Every other angle is resampled bilinearly; samples taken
//!   outside the source contribute 0.
//! * Translation moves content by `(dx, dy)`, positive `dx` to the right and
//!   positive `dy` downward. Vacated pixels are 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// A single image transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ActionSpec {
    Rotate { degrees: f64 },
    Translate { dx: i64, dy: i64 },
    Identity,
}

impl ActionSpec {
    pub fn rotate(degrees: f64) -> Self {
        ActionSpec::Rotate { degrees }
    }

    pub fn translate(dx: i64, dy: i64) -> Self {
        ActionSpec::Translate { dx, dy }
    }

    /// Checks the parts of the action that do not depend on the image.
    pub fn validate(&self) -> Result<()> {
        match *self {
            ActionSpec::Rotate { degrees } if !degrees.is_finite() => Err(Error::InvalidAction(
                format!("rotation angle must be finite, got {degrees}"),
            )),
            _ => Ok(()),
        }
    }

    /// Applies the transform to `img`, returning a new image of the same shape.
    pub fn apply(&self, img: &Image) -> Result<Image> {
        self.validate()?;
        match *self {
            ActionSpec::Identity => Ok(img.clone()),
            ActionSpec::Rotate { degrees } => Ok(rotate(img, degrees)),
            ActionSpec::Translate { dx, dy } => translate(img, dx, dy),
        }
    }
}

impl std::fmt::Display for ActionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActionSpec::Rotate { degrees } => write!(f, "rotate({degrees}°)"),
            ActionSpec::Translate { dx, dy } => write!(f, "translate({dx}, {dy})"),
            ActionSpec::Identity => f.write_str("identity"),
        }
    }
}

/// Free-function form of [`ActionSpec::apply`].
pub fn apply_action(img: &Image, act: &ActionSpec) -> Result<Image> {
    act.apply(img)
}

/// Ordered set of actions. The position of an action is its Q-table column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBank {
    pub name: String,
    pub actions: Vec<ActionSpec>,
}

/// Names accepted by [`ActionBank::named`].
pub const BANK_NAMES: &[&str] = &["caltech101", "imagenet-catsdogs"];

impl ActionBank {
    pub fn new(name: impl Into<String>, actions: Vec<ActionSpec>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidAction("action bank must not be empty".into()));
        }
        for a in &actions {
            a.validate()?;
        }
        Ok(Self {
            name: name.into(),
            actions,
        })
    }

    /// The experimental action banks:
    ///
    /// * `caltech101`: rotate by +12.5° and by −12.5°.
    /// * `imagenet-catsdogs`: rotate by 90°, rotate by 180°, and shift 15 px
    ///   down and to the right.
    pub fn named(name: &str) -> Result<Self> {
        let actions = match name {
            "caltech101" => vec![ActionSpec::rotate(12.5), ActionSpec::rotate(-12.5)],
            "imagenet-catsdogs" => vec![
                ActionSpec::rotate(90.0),
                ActionSpec::rotate(180.0),
                ActionSpec::translate(15, 15),
            ],
            other => return Err(Error::UnknownBank(other.to_string())),
        };
        Self::new(name, actions)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Result<&ActionSpec> {
        self.actions.get(index).ok_or(Error::OutOfBounds {
            what: "action",
            index,
            limit: self.actions.len(),
        })
    }
}

fn translate(img: &Image, dx: i64, dy: i64) -> Result<Image> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    if dx.abs() >= w || dy.abs() >= h {
        return Err(Error::InvalidAction(format!(
            "translation ({dx}, {dy}) out of range for {h}x{w} image"
        )));
    }
    let mut out = img.zeroed_like();
    let ch = img.channels();
    for y in 0..h {
        let sy = y - dy;
        if !(0..h).contains(&sy) {
            continue;
        }
        for x in 0..w {
            let sx = x - dx;
            if !(0..w).contains(&sx) {
                continue;
            }
            for c in 0..ch {
                out.set(
                    y as usize,
                    x as usize,
                    c,
                    img.get(sy as usize, sx as usize, c),
                );
            }
        }
    }
    Ok(out)
}

/// Quarter turns if `degrees` is an exact multiple of 90, reduced to 0..4.
fn quarter_turns(degrees: f64) -> Option<u8> {
    if degrees % 90.0 == 0.0 {
        Some(((degrees / 90.0).rem_euclid(4.0)) as u8)
    } else {
        None
    }
}

fn rotate(img: &Image, degrees: f64) -> Image {
    let square = img.width() == img.height();
    match quarter_turns(degrees) {
        Some(0) => img.clone(),
        Some(2) => rotate_180(img),
        Some(1) if square => rotate_90_ccw(img),
        Some(3) if square => rotate_90_cw(img),
        Some(k) => {
            // Exact trig so that integral source coordinates stay integral.
            let (sin, cos) = [(0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0)][k as usize];
            rotate_bilinear(img, sin, cos)
        }
        None => {
            let (sin, cos) = degrees.to_radians().sin_cos();
            rotate_bilinear(img, sin, cos)
        }
    }
}

fn rotate_180(img: &Image) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = img.zeroed_like();
    for y in 0..h {
        for x in 0..w {
            for c in 0..img.channels() {
                out.set(y, x, c, img.get(h - 1 - y, w - 1 - x, c));
            }
        }
    }
    out
}

// Square images only.
fn rotate_90_ccw(img: &Image) -> Image {
    let n = img.width();
    let mut out = img.zeroed_like();
    for y in 0..n {
        for x in 0..n {
            for c in 0..img.channels() {
                out.set(y, x, c, img.get(x, n - 1 - y, c));
            }
        }
    }
    out
}

// Square images only.
fn rotate_90_cw(img: &Image) -> Image {
    let n = img.width();
    let mut out = img.zeroed_like();
    for y in 0..n {
        for x in 0..n {
            for c in 0..img.channels() {
                out.set(y, x, c, img.get(n - 1 - x, y, c));
            }
        }
    }
    out
}

/// Inverse-mapping bilinear rotation with zero padding outside the source.
fn rotate_bilinear(img: &Image, sin: f64, cos: f64) -> Image {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let cx = (w as f64 - 1.0) * 0.5;
    let cy = (h as f64 - 1.0) * 0.5;
    let mut out = img.zeroed_like();
    let sample = |y: i64, x: i64, c: usize| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            img.get(y as usize, x as usize, c) as f64
        }
    };
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            if sx <= -1.0 || sy <= -1.0 || sx >= w as f64 || sy >= h as f64 {
                continue;
            }
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            for c in 0..ch {
                let v = sample(y0, x0, c) * (1.0 - fx) * (1.0 - fy)
                    + sample(y0, x0 + 1, c) * fx * (1.0 - fy)
                    + sample(y0 + 1, x0, c) * (1.0 - fx) * fy
                    + sample(y0 + 1, x0 + 1, c) * fx * fy;
                out.set(y, x, c, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}
