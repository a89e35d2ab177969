//! The agent action space and its JSON wire grammar.
//!
//! Every action serializes to a single JSON object of the form
//! `{"action": "<kind>", "params": {...}}`. Model outputs wrap that object in
//! an `<answer>` block, optionally preceded by a `<thinking>` block:
//!
//! ```text
//! <thinking>open the compose screen</thinking>
//! <answer>{"action":"click","params":{"x":540,"y":280}}</answer>
//! ```

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

/// A pixel position on the screen the action targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x < width && self.y < height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SwipeDirection {
    Up,
    Down,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemButton {
    Back,
    Home,
    Menu,
    Enter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminateStatus {
    Success,
    Fail,
}

macro_rules! str_enum {
    ($ty:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($ty::$variant => $s),+
                }
            }

            pub fn from_name(s: &str) -> Option<Self> {
                match s {
                    $($s => Some($ty::$variant),)+
                    _ => None,
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

str_enum!(SwipeDirection { Up => "up", Down => "down", Left => "left", Right => "right" });
str_enum!(SystemButton { Back => "back", Home => "home", Menu => "menu", Enter => "enter" });
str_enum!(TerminateStatus { Success => "success", Fail => "fail" });

/// Discriminant of [`Action`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionKind {
    Click,
    LongPress,
    Type,
    Swipe,
    Drag,
    SystemButton,
    Wait,
    Terminate,
    Answer,
    AskUser,
    McpCall,
}

str_enum!(ActionKind {
    Click => "click",
    LongPress => "long_press",
    Type => "type",
    Swipe => "swipe",
    Drag => "drag",
    SystemButton => "system_button",
    Wait => "wait",
    Terminate => "terminate",
    Answer => "answer",
    AskUser => "ask_user",
    McpCall => "mcp_call",
});

/// One agent action with its kind-specific parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Click { point: Point },
    LongPress { point: Point },
    Type { text: String },
    Swipe { direction: SwipeDirection, point: Option<Point> },
    Drag { start: Point, end: Point },
    SystemButton { button: SystemButton },
    Wait,
    Terminate { status: TerminateStatus },
    Answer { text: String },
    AskUser { text: String },
    McpCall { tool: String, args: BTreeMap<String, Value> },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionParseError {
    #[error("malformed action: {0}")]
    Malformed(String),
    #[error("unknown action kind `{0}`")]
    UnknownKind(String),
    #[error("action `{kind}` is missing parameter `{param}`")]
    MissingParam { kind: ActionKind, param: &'static str },
    #[error("action `{kind}` has invalid parameter `{param}`: {reason}")]
    InvalidParam {
        kind: ActionKind,
        param: String,
        reason: String,
    },
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click { .. } => ActionKind::Click,
            Action::LongPress { .. } => ActionKind::LongPress,
            Action::Type { .. } => ActionKind::Type,
            Action::Swipe { .. } => ActionKind::Swipe,
            Action::Drag { .. } => ActionKind::Drag,
            Action::SystemButton { .. } => ActionKind::SystemButton,
            Action::Wait => ActionKind::Wait,
            Action::Terminate { .. } => ActionKind::Terminate,
            Action::Answer { .. } => ActionKind::Answer,
            Action::AskUser { .. } => ActionKind::AskUser,
            Action::McpCall { .. } => ActionKind::McpCall,
        }
    }

    pub fn click(x: u32, y: u32) -> Self {
        Action::Click { point: Point::new(x, y) }
    }

    pub fn type_text(text: impl Into<String>) -> Self {
        Action::Type { text: text.into() }
    }

    pub fn back() -> Self {
        Action::SystemButton { button: SystemButton::Back }
    }

    pub fn terminate_success() -> Self {
        Action::Terminate { status: TerminateStatus::Success }
    }

    pub fn is_terminate(&self) -> bool {
        matches!(self, Action::Terminate { .. })
    }

    /// Every pixel coordinate the action carries.
    pub fn points(&self) -> Vec<Point> {
        match self {
            Action::Click { point } | Action::LongPress { point } => vec![*point],
            Action::Swipe { point, .. } => point.iter().copied().collect(),
            Action::Drag { start, end } => vec![*start, *end],
            _ => Vec::new(),
        }
    }

    pub fn within_bounds(&self, width: u32, height: u32) -> bool {
        self.points().iter().all(|p| p.within(width, height))
    }

    /// Applies `f` to every coordinate, keeping everything else intact.
    pub fn map_points(&self, mut f: impl FnMut(Point) -> Point) -> Action {
        match self {
            Action::Click { point } => Action::Click { point: f(*point) },
            Action::LongPress { point } => Action::LongPress { point: f(*point) },
            Action::Swipe { direction, point } => Action::Swipe {
                direction: *direction,
                point: point.map(&mut f),
            },
            Action::Drag { start, end } => Action::Drag {
                start: f(*start),
                end: f(*end),
            },
            other => other.clone(),
        }
    }

    /// Free text carried by the action, if any.
    pub fn text(&self) -> Option<&str> {
        match self {
            Action::Type { text } | Action::Answer { text } | Action::AskUser { text } => Some(text),
            _ => None,
        }
    }

    pub fn to_value(&self) -> Value {
        let mut params = Map::new();
        let put_point = |params: &mut Map<String, Value>, sx: &str, sy: &str, p: &Point| {
            params.insert(sx.to_string(), Value::from(p.x));
            params.insert(sy.to_string(), Value::from(p.y));
        };
        match self {
            Action::Click { point } | Action::LongPress { point } => put_point(&mut params, "x", "y", point),
            Action::Type { text } | Action::Answer { text } | Action::AskUser { text } => {
                params.insert("text".into(), Value::from(text.clone()));
            }
            Action::Swipe { direction, point } => {
                params.insert("direction".into(), Value::from(direction.as_str()));
                if let Some(p) = point {
                    put_point(&mut params, "x", "y", p);
                }
            }
            Action::Drag { start, end } => {
                put_point(&mut params, "x1", "y1", start);
                put_point(&mut params, "x2", "y2", end);
            }
            Action::SystemButton { button } => {
                params.insert("button".into(), Value::from(button.as_str()));
            }
            Action::Wait => {}
            Action::Terminate { status } => {
                params.insert("status".into(), Value::from(status.as_str()));
            }
            Action::McpCall { tool, args } => {
                params.insert("tool".into(), Value::from(tool.clone()));
                params.insert(
                    "args".into(),
                    Value::Object(args.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
                );
            }
        }
        let mut obj = Map::new();
        obj.insert("action".into(), Value::from(self.kind().as_str()));
        obj.insert("params".into(), Value::Object(params));
        Value::Object(obj)
    }

    pub fn from_value(value: &Value) -> Result<Action, ActionParseError> {
        let obj = value
            .as_object()
            .ok_or_else(|| ActionParseError::Malformed("expected a JSON object".into()))?;
        let kind_name = obj
            .get("action")
            .and_then(Value::as_str)
            .ok_or_else(|| ActionParseError::Malformed("missing string field `action`".into()))?;
        let kind =
            ActionKind::from_name(kind_name).ok_or_else(|| ActionParseError::UnknownKind(kind_name.to_string()))?;
        if let Some(extra) = obj.keys().find(|k| *k != "action" && *k != "params") {
            return Err(ActionParseError::Malformed(format!("unexpected top-level field `{extra}`")));
        }
        let empty = Map::new();
        let params = match obj.get("params") {
            None | Some(Value::Null) => &empty,
            Some(Value::Object(m)) => m,
            Some(_) => return Err(ActionParseError::Malformed("`params` must be an object".into())),
        };
        let p = Params { kind, params };
        let action = match kind {
            ActionKind::Click => Action::Click { point: p.point("x", "y")? },
            ActionKind::LongPress => Action::LongPress { point: p.point("x", "y")? },
            ActionKind::Type => Action::Type { text: p.string("text")? },
            ActionKind::Answer => Action::Answer { text: p.string("text")? },
            ActionKind::AskUser => Action::AskUser { text: p.string("text")? },
            ActionKind::Swipe => {
                let direction = p.named("direction", SwipeDirection::from_name)?;
                let point = match (params.contains_key("x"), params.contains_key("y")) {
                    (false, false) => None,
                    _ => Some(p.point("x", "y")?),
                };
                Action::Swipe { direction, point }
            }
            ActionKind::Drag => Action::Drag {
                start: p.point("x1", "y1")?,
                end: p.point("x2", "y2")?,
            },
            ActionKind::SystemButton => Action::SystemButton {
                button: p.named("button", SystemButton::from_name)?,
            },
            ActionKind::Wait => Action::Wait,
            ActionKind::Terminate => Action::Terminate {
                status: p.named("status", TerminateStatus::from_name)?,
            },
            ActionKind::McpCall => {
                let tool = p.string("tool")?;
                let args = match params.get("args") {
                    None | Some(Value::Null) => BTreeMap::new(),
                    Some(Value::Object(m)) => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
                    Some(_) => return Err(p.invalid("args", "expected an object")),
                };
                Action::McpCall { tool, args }
            }
        };
        p.reject_unknown(allowed_params(kind))?;
        Ok(action)
    }
}

fn allowed_params(kind: ActionKind) -> &'static [&'static str] {
    match kind {
        ActionKind::Click | ActionKind::LongPress => &["x", "y"],
        ActionKind::Type | ActionKind::Answer | ActionKind::AskUser => &["text"],
        ActionKind::Swipe => &["direction", "x", "y"],
        ActionKind::Drag => &["x1", "y1", "x2", "y2"],
        ActionKind::SystemButton => &["button"],
        ActionKind::Wait => &[],
        ActionKind::Terminate => &["status"],
        ActionKind::McpCall => &["tool", "args"],
    }
}

struct Params<'a> {
    kind: ActionKind,
    params: &'a Map<String, Value>,
}

impl Params<'_> {
    fn invalid(&self, param: &str, reason: &str) -> ActionParseError {
        ActionParseError::InvalidParam {
            kind: self.kind,
            param: param.to_string(),
            reason: reason.to_string(),
        }
    }

    fn get(&self, param: &'static str) -> Result<&Value, ActionParseError> {
        self.params
            .get(param)
            .ok_or(ActionParseError::MissingParam { kind: self.kind, param })
    }

    fn string(&self, param: &'static str) -> Result<String, ActionParseError> {
        self.get(param)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| self.invalid(param, "expected a string"))
    }

    fn named<T>(&self, param: &'static str, parse: impl Fn(&str) -> Option<T>) -> Result<T, ActionParseError> {
        let s = self.string(param)?;
        parse(&s).ok_or_else(|| self.invalid(param, &format!("unrecognized value `{s}`")))
    }

    fn coord(&self, param: &'static str) -> Result<u32, ActionParseError> {
        let v = self.get(param)?;
        if let Some(u) = v.as_u64() {
            return u32::try_from(u).map_err(|_| self.invalid(param, "coordinate out of range"));
        }
        match v.as_f64() {
            Some(f) if f.is_finite() && f >= 0.0 && f <= u32::MAX as f64 => Ok(f.round() as u32),
            Some(_) => Err(self.invalid(param, "coordinates must be non-negative")),
            None => Err(self.invalid(param, "expected a number")),
        }
    }

    fn point(&self, px: &'static str, py: &'static str) -> Result<Point, ActionParseError> {
        Ok(Point::new(self.coord(px)?, self.coord(py)?))
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<(), ActionParseError> {
        match self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(self.invalid(k, "parameter not accepted by this action")),
            None => Ok(()),
        }
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        Action::from_value(&value).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_action(self))
    }
}

/// Compact, canonical JSON for an action.
pub fn serialize_action(action: &Action) -> String {
    action.to_value().to_string()
}

/// Extracts the contents of `<tag>...</tag>`, if both tags are present.
pub fn extract_tag<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = start + text[start..].find(&close)?;
    Some(&text[start..end])
}

fn strip_fence(s: &str) -> &str {
    let s = s.trim();
    let Some(rest) = s.strip_prefix("```") else {
        return s;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Parses a raw model output into an action.
///
/// Accepts either a bare JSON action object or a full model output whose
/// `<answer>` block holds one (optionally inside a ```` ``` ```` fence).
pub fn parse_action(model_output: &str) -> Result<Action, ActionParseError> {
    let body = match extract_tag(model_output, "answer") {
        Some(inner) => inner,
        None if model_output.contains("<answer>") => {
            return Err(ActionParseError::Malformed("unterminated <answer> block".into()))
        }
        None => model_output,
    };
    let body = strip_fence(body);
    let value: Value =
        serde_json::from_str(body).map_err(|e| ActionParseError::Malformed(format!("invalid JSON: {e}")))?;
    Action::from_value(&value)
}

/// Renders a model output with thinking and answer blocks.
pub fn format_model_output(thought: &str, action: &Action) -> String {
    format!("<thinking>{thought}</thinking>\n<answer>{}</answer>", serialize_action(action))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_terminate() {
        let a = parse_action(r#"{"action":"terminate","params":{"status":"success"}}"#).unwrap();
        assert_eq!(a, Action::Terminate { status: TerminateStatus::Success });
    }

    #[test]
    fn parses_click() {
        let a = parse_action(r#"{"action":"click","params":{"x":120,"y":300}}"#).unwrap();
        assert_eq!(a, Action::click(120, 300));
    }

    #[test]
    fn unknown_kind() {
        assert_eq!(
            parse_action(r#"{"action":"fly"}"#),
            Err(ActionParseError::UnknownKind("fly".into()))
        );
    }

    #[test]
    fn missing_param_is_distinct() {
        let err = parse_action(r#"{"action":"click","params":{"x":1}}"#).unwrap_err();
        assert_eq!(
            err,
            ActionParseError::MissingParam {
                kind: ActionKind::Click,
                param: "y"
            }
        );
        assert!(matches!(parse_action("not json"), Err(ActionParseError::Malformed(_))));
        assert!(matches!(
            parse_action(r#"{"action":"click","params":{"x":-3,"y":1}}"#),
            Err(ActionParseError::InvalidParam { .. })
        ));
        assert!(matches!(
            parse_action(r#"{"action":"wait","params":{"seconds":3}}"#),
            Err(ActionParseError::InvalidParam { .. })
        ));
    }

    #[test]
    fn answer_block_and_fence() {
        let out = "<thinking>tap it</thinking>\n<answer>```json\n{\"action\":\"wait\"}\n```</answer>";
        assert_eq!(parse_action(out).unwrap(), Action::Wait);
        assert!(matches!(
            parse_action("<answer>{\"action\":\"wait\"}"),
            Err(ActionParseError::Malformed(_))
        ));
    }

    #[test]
    fn format_then_parse() {
        let a = Action::Swipe {
            direction: SwipeDirection::Up,
            point: Some(Point::new(5, 9)),
        };
        assert_eq!(parse_action(&format_model_output("scroll", &a)).unwrap(), a);
    }

    pub(crate) fn arb_point() -> impl Strategy<Value = Point> {
        (0u32..4000, 0u32..4000).prop_map(|(x, y)| Point::new(x, y))
    }

    pub(crate) fn arb_action() -> impl Strategy<Value = Action> {
        let text = "[a-zA-Z0-9 \"\\\\{}<>:,.-]{0,16}";
        prop_oneof![
            arb_point().prop_map(|point| Action::Click { point }),
            arb_point().prop_map(|point| Action::LongPress { point }),
            text.prop_map(|text| Action::Type { text }),
            (0usize..4, proptest::option::of(arb_point())).prop_map(|(d, point)| Action::Swipe {
                direction: SwipeDirection::ALL[d],
                point
            }),
            (arb_point(), arb_point()).prop_map(|(start, end)| Action::Drag { start, end }),
            (0usize..4).prop_map(|b| Action::SystemButton {
                button: SystemButton::ALL[b]
            }),
            Just(Action::Wait),
            (0usize..2).prop_map(|s| Action::Terminate {
                status: TerminateStatus::ALL[s]
            }),
            text.prop_map(|text| Action::Answer { text }),
            text.prop_map(|text| Action::AskUser { text }),
            ("[a-z_]{1,10}", proptest::collection::btree_map("[a-z]{1,6}", text, 0..3)).prop_map(|(tool, args)| {
                Action::McpCall {
                    tool,
                    args: args.into_iter().map(|(k, v)| (k, Value::from(v))).collect(),
                }
            }),
        ]
    }

    proptest! {
        #[test]
        fn serialize_parse_roundtrip(a in arb_action()) {
            prop_assert_eq!(parse_action(&serialize_action(&a)).unwrap(), a.clone());
            let via_serde: Action = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
            prop_assert_eq!(via_serde, a);
        }
    }
}
