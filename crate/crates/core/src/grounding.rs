//! Grounding rewards and the two-pass zoom-in coordinate transform.
//!
//! The zoom-in pass crops a window of half the image size around a coarse
//! prediction, resizes it back to full resolution and asks for a refined
//! point in the resized crop's pixels. Mapping back is
//! `origin + refined / 2` per axis.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::action::{extract_tag, parse_action, Point};

/// Ground-truth box with inclusive edges on all four sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_l: u32,
    pub y_l: u32,
    pub x_r: u32,
    pub y_r: u32,
}

impl BBox {
    pub fn new(x_l: u32, y_l: u32, x_r: u32, y_r: u32) -> Self {
        assert!(x_l <= x_r && y_l <= y_r, "bbox corners out of order");
        Self { x_l, y_l, x_r, y_r }
    }

    pub fn contains(&self, p: Point) -> bool {
        self.x_l <= p.x && p.x <= self.x_r && self.y_l <= p.y && p.y <= self.y_r
    }
}

pub fn point_in_box_reward(p: Point, b: &BBox) -> u8 {
    u8::from(b.contains(p))
}

fn coord_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[\(\[]\s*(\d+(?:\.\d+)?)\s*,\s*(\d+(?:\.\d+)?)\s*[\)\]]").expect("valid regex")
    })
}

/// First coordinate in an answer body: `(x, y)`, `[x, y]`, or an action
/// object that carries a point.
pub fn extract_coordinate(answer: &str) -> Option<Point> {
    if let Ok(action) = parse_action(answer) {
        return action.points().first().copied();
    }
    let caps = coord_regex().captures(answer)?;
    let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| v.round() as u32);
    Some(Point::new(num(&caps[1])?, num(&caps[2])?))
}

/// 1 iff both tagged blocks are present and the answer holds a coordinate.
pub fn format_reward(model_output: &str) -> u8 {
    let ok = extract_tag(model_output, "thinking").is_some()
        && extract_tag(model_output, "answer").is_some_and(|a| extract_coordinate(a).is_some());
    u8::from(ok)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoomWindow {
    pub origin: Point,
    pub width: u32,
    pub height: u32,
}

impl ZoomWindow {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.origin.x
            && p.x < self.origin.x + self.width
            && p.y >= self.origin.y
            && p.y < self.origin.y + self.height
    }
}

fn clamp_axis(center: u32, size: u32, extent: u32) -> u32 {
    center.saturating_sub(size / 2).min(extent - size)
}

/// Half-size window centred on `coarse`, translated to stay inside the image.
pub fn zoom_in_window(coarse: Point, image: (u32, u32)) -> ZoomWindow {
    let (w, h) = image;
    assert!(w >= 2 && h >= 2, "image too small to zoom");
    let (cw, ch) = (w / 2, h / 2);
    ZoomWindow {
        origin: Point::new(clamp_axis(coarse.x, cw, w), clamp_axis(coarse.y, ch, h)),
        width: cw,
        height: ch,
    }
}

/// Rounds `origin + refined / 2`; an exact half goes toward the window centre.
fn remap_axis(origin: u32, refined: u32, extent: u32) -> u32 {
    let half = refined / 2;
    let tie = refined % 2 == 1;
    // refined/2 sits left of centre when refined < extent/2 in crop pixels
    let up = tie && u64::from(refined) * 2 < u64::from(extent);
    let v = origin + half + u32::from(up);
    v.min(extent - 1)
}

/// Maps a refined point given in resized-crop pixels back to the original image.
pub fn zoom_in_remap(refined: Point, origin: Point, image: (u32, u32)) -> Point {
    let (w, h) = image;
    Point::new(remap_axis(origin.x, refined.x, w), remap_axis(origin.y, refined.y, h))
}

/// Forward map: where an original-image point lands in the resized crop.
/// `None` if it lies outside the window.
pub fn zoom_in_forward(p: Point, window: &ZoomWindow) -> Option<Point> {
    window
        .contains(p)
        .then(|| Point::new((p.x - window.origin.x) * 2, (p.y - window.origin.y) * 2))
}

/// One gold record for grounding evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingGold {
    pub id: String,
    #[serde(default)]
    pub category: String,
    pub bbox: BBox,
    pub width: u32,
    pub height: u32,
}

/// One prediction: either a raw model output or a bare point, plus an
/// optional second-pass refined point for zoom-in evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingPrediction {
    pub id: String,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub point: Option<Point>,
    #[serde(default)]
    pub refined: Option<Point>,
}

impl GroundingPrediction {
    pub fn coarse(&self) -> Option<Point> {
        match (&self.point, &self.output) {
            (Some(p), _) => Some(*p),
            (None, Some(out)) => extract_tag(out, "answer").and_then(extract_coordinate),
            (None, None) => None,
        }
    }

    /// The final predicted point; with `zoom`, a refined point is remapped
    /// through the window around the coarse one.
    pub fn resolve(&self, image: (u32, u32), zoom: bool) -> Option<Point> {
        let coarse = self.coarse()?;
        match (zoom, self.refined) {
            (true, Some(r)) => {
                let win = zoom_in_window(coarse, image);
                Some(zoom_in_remap(r, win.origin, image))
            }
            _ => Some(coarse),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: String,
    pub total: usize,
    pub hits: usize,
    pub format_ok: usize,
}

impl CategoryScore {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

/// Per-category point-in-box accuracy; the last row is the overall score.
/// Gold records without a prediction count as misses.
pub fn evaluate_grounding(gold: &[GroundingGold], preds: &[GroundingPrediction], zoom: bool) -> Vec<CategoryScore> {
    use std::collections::BTreeMap;
    let by_id: BTreeMap<&str, &GroundingPrediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut cats: BTreeMap<String, CategoryScore> = BTreeMap::new();
    let mut overall = CategoryScore {
        category: "overall".into(),
        ..Default::default()
    };
    for g in gold {
        let pred = by_id.get(g.id.as_str());
        let hit = pred
            .and_then(|p| p.resolve((g.width, g.height), zoom))
            .is_some_and(|pt| g.bbox.contains(pt));
        let fmt = pred.is_some_and(|p| match &p.output {
            Some(out) => format_reward(out) == 1,
            None => p.point.is_some(),
        });
        let name = if g.category.is_empty() { "default" } else { &g.category };
        let row = cats.entry(name.to_string()).or_insert_with(|| CategoryScore {
            category: name.to_string(),
            ..Default::default()
        });
        for r in [row, &mut overall] {
            r.total += 1;
            r.hits += usize::from(hit);
            r.format_ok += usize::from(fmt);
        }
    }
    let mut out: Vec<CategoryScore> = cats.into_values().collect();
    out.push(overall);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_edges_are_inclusive() {
        let b = BBox::new(0, 0, 10, 10);
        assert_eq!(point_in_box_reward(Point::new(5, 5), &b), 1);
        assert_eq!(point_in_box_reward(Point::new(10, 10), &b), 1);
        assert_eq!(point_in_box_reward(Point::new(0, 10), &b), 1);
        assert_eq!(point_in_box_reward(Point::new(11, 5), &b), 0);
    }

    #[test]
    fn format_checks() {
        assert_eq!(format_reward("<thinking>t</thinking><answer>(12, 40)</answer>"), 1);
        assert_eq!(
            format_reward(r#"<thinking>t</thinking><answer>{"action":"click","params":{"x":1,"y":2}}</answer>"#),
            1
        );
        assert_eq!(format_reward("<thinking>t</thinking>(12, 40)"), 0);
        assert_eq!(format_reward("<thinking>t</thinking><answer>(12; forty)</answer>"), 0);
        assert_eq!(format_reward("<answer>(1, 2)</answer>"), 0);
    }

    #[test]
    fn window_centering_and_clamping() {
        let centred = zoom_in_window(Point::new(500, 1000), (1000, 2000));
        assert_eq!((centred.origin, centred.width, centred.height), (Point::new(250, 500), 500, 1000));
        assert_eq!(zoom_in_window(Point::new(0, 0), (1000, 2000)).origin, Point::new(0, 0));
        assert_eq!(zoom_in_window(Point::new(1000, 2000), (1000, 2000)).origin, Point::new(500, 1000));
    }

    #[test]
    fn remap_examples() {
        let img = (1000, 2000);
        let o = Point::new(250, 500);
        assert_eq!(zoom_in_remap(Point::new(400, 600), o, img), Point::new(450, 800));
        assert_eq!(zoom_in_remap(Point::new(0, 0), o, img), o);
        // ties round toward the centre of the crop
        assert_eq!(zoom_in_remap(Point::new(1, 1), o, img), Point::new(251, 501));
        assert_eq!(zoom_in_remap(Point::new(999, 1999), o, img), Point::new(749, 1499));
    }

    #[test]
    fn forward_then_remap_is_identity() {
        let img = (1080, 2400);
        let win = zoom_in_window(Point::new(900, 300), img);
        for x in (win.origin.x..win.origin.x + win.width).step_by(7) {
            for y in (win.origin.y..win.origin.y + win.height).step_by(13) {
                let p = Point::new(x, y);
                let r = zoom_in_forward(p, &win).unwrap();
                assert_eq!(zoom_in_remap(r, win.origin, img), p);
            }
        }
    }

    #[test]
    fn evaluation_by_category() {
        let gold = vec![
            GroundingGold {
                id: "a".into(),
                category: "icon".into(),
                bbox: BBox::new(0, 0, 10, 10),
                width: 100,
                height: 100,
            },
            GroundingGold {
                id: "b".into(),
                category: "text".into(),
                bbox: BBox::new(50, 50, 60, 60),
                width: 100,
                height: 100,
            },
        ];
        let preds = vec![
            GroundingPrediction {
                id: "a".into(),
                output: Some("<thinking>x</thinking><answer>(10, 10)</answer>".into()),
                point: None,
                refined: None,
            },
            GroundingPrediction {
                id: "b".into(),
                output: None,
                point: Some(Point::new(70, 70)),
                refined: None,
            },
        ];
        let rows = evaluate_grounding(&gold, &preds, false);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].accuracy(), 1.0);
        assert_eq!(rows[1].accuracy(), 0.0);
        assert_eq!(rows[2].accuracy(), 0.5);
    }
}
