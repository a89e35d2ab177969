//! Observations: a screenshot handle plus the structured layout behind it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::action::Point;

/// Axis-aligned pixel rectangle, half-open: `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub const fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x < self.x1 && p.y >= self.y0 && p.y < self.y1
    }

    pub fn center(&self) -> Point {
        Point::new((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)
    }

    pub fn overlaps(&self, other: &PixelBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    fn scaled(&self, factor: f64) -> PixelBox {
        let s = |v: u32| (v as f64 * factor).round() as u32;
        PixelBox::new(s(self.x0), s(self.y0), s(self.x1), s(self.y1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidgetKind {
    Button,
    Textfield,
    ListItem,
    Toggle,
    Dialog,
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    #[default]
    Main,
    Dialog,
}

/// What a policy can read about one on-screen widget.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WidgetView {
    pub id: String,
    pub kind: WidgetKind,
    pub bbox: PixelBox,
    pub label: String,
    #[serde(default)]
    pub value: String,
    #[serde(default)]
    pub focused: bool,
    #[serde(default)]
    pub sensitive: bool,
    #[serde(default)]
    pub layer: Layer,
}

/// Opaque screenshot handle: dimensions plus a content hash.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Screenshot {
    pub width: u32,
    pub height: u32,
    pub hash: String,
}

impl Screenshot {
    pub fn from_payload(width: u32, height: u32, payload: &[u8]) -> Self {
        assert!(width > 0 && height > 0, "screenshot dimensions must be positive");
        Self {
            width,
            height,
            hash: content_hash(payload),
        }
    }
}

pub fn content_hash(payload: &[u8]) -> String {
    hex::encode(Sha256::digest(payload))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub screenshot: Screenshot,
    /// `app/screen` identifier of what is displayed.
    pub screen: String,
    pub layout: Vec<WidgetView>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aux: BTreeMap<String, Value>,
}

impl Observation {
    /// Builds an observation whose hash covers the screen id and layout.
    pub fn render(width: u32, height: u32, screen: impl Into<String>, layout: Vec<WidgetView>) -> Self {
        let screen = screen.into();
        let payload = serde_json::to_vec(&(&screen, &layout)).expect("layout serializes");
        Self {
            screenshot: Screenshot::from_payload(width, height, &payload),
            screen,
            layout,
            aux: BTreeMap::new(),
        }
    }

    pub fn hash(&self) -> &str {
        &self.screenshot.hash
    }

    pub fn width(&self) -> u32 {
        self.screenshot.width
    }

    pub fn height(&self) -> u32 {
        self.screenshot.height
    }

    pub fn with_aux(mut self, key: &str, value: Value) -> Self {
        self.aux.insert(key.to_string(), value);
        self
    }

    pub fn focused(&self) -> Option<&WidgetView> {
        self.layout.iter().find(|w| w.focused)
    }

    pub fn has_dialog(&self) -> bool {
        self.layout.iter().any(|w| w.layer == Layer::Dialog)
    }

    /// Copy of this observation as seen after resizing the image by `factor`.
    pub fn scaled(&self, factor: f64) -> Observation {
        assert!(factor > 0.0 && factor <= 1.0, "scale factor must lie in (0, 1]");
        if factor == 1.0 {
            return self.clone();
        }
        let dim = |v: u32| ((v as f64 * factor).round() as u32).max(1);
        let layout = self
            .layout
            .iter()
            .map(|w| WidgetView {
                bbox: w.bbox.scaled(factor),
                ..w.clone()
            })
            .collect();
        Observation {
            screenshot: Screenshot {
                width: dim(self.width()),
                height: dim(self.height()),
                hash: content_hash(format!("{}@{factor}", self.hash()).as_bytes()),
            },
            screen: self.screen.clone(),
            layout,
            aux: self.aux.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn widget(id: &str, x0: u32) -> WidgetView {
        WidgetView {
            id: id.into(),
            kind: WidgetKind::Button,
            bbox: PixelBox::new(x0, 0, x0 + 10, 10),
            label: id.into(),
            value: String::new(),
            focused: false,
            sensitive: false,
            layer: Layer::Main,
        }
    }

    #[test]
    fn hash_is_stable_for_identical_payloads() {
        let a = Observation::render(100, 200, "app/home", vec![widget("a", 0)]);
        let b = Observation::render(100, 200, "app/home", vec![widget("a", 0)]);
        let c = Observation::render(100, 200, "app/home", vec![widget("a", 20)]);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        // aux data does not change the image
        assert_eq!(a.clone().with_aux("k", Value::from(1)).hash(), a.hash());
    }

    #[test]
    fn scaling_halves_geometry() {
        let o = Observation::render(1080, 2400, "s", vec![widget("a", 40)]);
        let s = o.scaled(0.5);
        assert_eq!((s.width(), s.height()), (540, 1200));
        assert_eq!(s.layout[0].bbox, PixelBox::new(20, 0, 25, 5));
        assert_ne!(s.hash(), o.hash());
    }

    #[test]
    fn box_is_half_open() {
        let b = PixelBox::new(0, 0, 10, 10);
        assert!(b.contains(Point::new(9, 9)));
        assert!(!b.contains(Point::new(10, 5)));
    }
}
