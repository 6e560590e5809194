//! Text and JSON forms of a qube.
//!
//! The text form has one node per line, indented two spaces per level:
//!
//! ```text
//! root
//!   class=od
//!     param=t/z @key=0a1b
//! ```
//!
//! Names and values are `%XX`-escaped (reserved characters plus `~` and
//! space). A value whose token would sniff to another type carries a
//! suffix: `~s` (string), `~i` (integer), `~d` (date) or `~t` (timestamp).
//!
//! The interchange form is nested JSON tagged `"version": "qube/1"`.

use std::sync::Arc;

use serde_json::{json, Map, Value};

use crate::error::{QubeError, Result};
use crate::node::{PayloadRef, QubeNode};
use crate::qube::Qube;
use crate::value::{escape, unescape, CoordinateValue, DimensionName, ValueKind, ROOT_DIM};

pub const INTERCHANGE_VERSION: &str = "qube/1";

const TEXT_EXTRA: &[char] = &['~', ' '];
const PAYLOAD_SEP: &str = " @key=";

fn marker(kind: ValueKind) -> &'static str {
    match kind {
        ValueKind::Int => "~i",
        ValueKind::Str => "~s",
        ValueKind::Date => "~d",
        ValueKind::Timestamp => "~t",
    }
}

/// Text-format token for one value, as used by `ls` and `axes`.
pub fn render_value(v: &CoordinateValue) -> String {
    render_value_with(v, TEXT_EXTRA)
}

/// Escaped token plus a kind marker when sniffing would not recover `v`.
pub(crate) fn render_value_with(v: &CoordinateValue, extra: &[char]) -> String {
    let mut s = escape(&v.token(), extra);
    if !v.sniffs_back() {
        s.push_str(marker(v.kind()));
    }
    s
}

pub fn to_text(q: &Qube) -> String {
    fn line(n: &QubeNode, depth: usize, out: &mut String) {
        for _ in 0..depth {
            out.push_str("  ");
        }
        out.push_str(&escape(n.dim().as_str(), TEXT_EXTRA));
        out.push('=');
        let vals: Vec<_> = n.values().iter().map(render_value).collect();
        out.push_str(&vals.join("/"));
        if let Some(p) = n.payload() {
            out.push_str(PAYLOAD_SEP);
            out.push_str(&p.to_hex());
        }
        out.push('\n');
        for c in n.children() {
            line(c, depth + 1, out);
        }
    }
    let mut out = String::from(ROOT_DIM);
    out.push('\n');
    for c in q.children() {
        line(c, 1, &mut out);
    }
    out
}

struct Pending {
    dim: DimensionName,
    values: Vec<CoordinateValue>,
    payload: Option<PayloadRef>,
    children: Vec<Arc<QubeNode>>,
    line: usize,
}

impl Pending {
    fn finish(self) -> Result<Arc<QubeNode>> {
        let line = self.line;
        QubeNode::new(self.dim, self.values, self.payload, self.children)
            .map_err(|e| QubeError::syntax(line, 1, e.to_string()))
    }
}

pub(crate) fn parse_value(token: &str, line: usize, col: usize) -> Result<CoordinateValue> {
    let (body, kind) = match token.len().checked_sub(2).map(|i| token.split_at(i)) {
        Some((body, "~s")) => (body, Some(ValueKind::Str)),
        Some((body, "~i")) => (body, Some(ValueKind::Int)),
        Some((body, "~d")) => (body, Some(ValueKind::Date)),
        Some((body, "~t")) => (body, Some(ValueKind::Timestamp)),
        _ => (token, None),
    };
    if body.contains('~') {
        return Err(QubeError::syntax(
            line,
            col,
            format!("stray `~` in {token:?}"),
        ));
    }
    let raw = unescape(body).map_err(|at| QubeError::syntax(line, col + at, "bad %-escape"))?;
    match kind {
        None => Ok(CoordinateValue::sniff(&raw)),
        Some(k) => k.parse(&raw).ok_or_else(|| {
            QubeError::syntax(line, col, format!("{raw:?} is not a valid {}", k.name()))
        }),
    }
}

pub fn from_text(doc: &str) -> Result<Qube> {
    let mut stack: Vec<Pending> = Vec::new();
    let mut seen_root = false;
    let mut root_children: Vec<Arc<QubeNode>> = Vec::new();

    fn close(stack: &mut Vec<Pending>, root: &mut Vec<Arc<QubeNode>>, depth: usize) -> Result<()> {
        while stack.len() > depth {
            let done = stack.pop().expect("len checked").finish()?;
            match stack.last_mut() {
                Some(parent) => parent.children.push(done),
                None => root.push(done),
            }
        }
        Ok(())
    }

    for (idx, raw) in doc.split('\n').enumerate() {
        let line = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            continue;
        }
        let body = raw.trim_start_matches(' ');
        let indent = raw.len() - body.len();
        if body.starts_with('\t') || raw[..indent].contains('\t') {
            return Err(QubeError::Indent {
                line,
                message: "tabs are not allowed in indentation".into(),
            });
        }
        if !seen_root {
            if indent != 0 || body != ROOT_DIM {
                return Err(QubeError::syntax(
                    line,
                    indent + 1,
                    "document must start with `root`",
                ));
            }
            seen_root = true;
            continue;
        }
        if indent % 2 != 0 || indent == 0 {
            return Err(QubeError::Indent {
                line,
                message: format!("indentation of {indent} spaces is not a positive multiple of 2"),
            });
        }
        let depth = indent / 2;
        if depth > stack.len() + 1 {
            return Err(QubeError::Indent {
                line,
                message: format!("jumps to depth {depth} below depth {}", stack.len()),
            });
        }
        close(&mut stack, &mut root_children, depth - 1)?;

        let (node_part, payload) = match body.split_once(PAYLOAD_SEP) {
            Some((n, hex)) => {
                let p = PayloadRef::from_hex(hex).ok_or_else(|| {
                    QubeError::syntax(
                        line,
                        indent + n.len() + PAYLOAD_SEP.len() + 1,
                        "bad payload hex",
                    )
                })?;
                (n, Some(p))
            }
            None => (body, None),
        };
        let (name, rhs) = node_part
            .split_once('=')
            .ok_or_else(|| QubeError::syntax(line, indent + 1, "expected `dim=values`"))?;
        let name = unescape(name)
            .map_err(|at| QubeError::syntax(line, indent + 1 + at, "bad %-escape"))?;
        let dim = DimensionName::new(&name)
            .map_err(|e| QubeError::syntax(line, indent + 1, e.to_string()))?;
        let mut col = indent + name.len() + 2;
        let mut values = Vec::new();
        for token in rhs.split('/') {
            values.push(parse_value(token, line, col)?);
            col += token.len() + 1;
        }
        stack.push(Pending {
            dim,
            values,
            payload,
            children: Vec::new(),
            line,
        });
    }
    if !seen_root {
        return Err(QubeError::syntax(1, 1, "document must start with `root`"));
    }
    close(&mut stack, &mut root_children, 0)?;
    Qube::from_children(root_children)
}

fn value_json(v: &CoordinateValue) -> Value {
    let value = match v {
        CoordinateValue::Int(i) => json!(i),
        other => json!(other.to_iso()),
    };
    json!({ "tag": v.kind().name(), "value": value })
}

fn node_json(n: &QubeNode) -> Value {
    let mut m = Map::new();
    m.insert("dim".into(), json!(n.dim().as_str()));
    m.insert("values".into(), n.values().iter().map(value_json).collect());
    if let Some(p) = n.payload() {
        m.insert("payload".into(), json!(p.to_hex()));
    }
    m.insert(
        "children".into(),
        n.children().iter().map(|c| node_json(c)).collect(),
    );
    Value::Object(m)
}

pub fn to_interchange(q: &Qube) -> Value {
    json!({ "version": INTERCHANGE_VERSION, "root": node_json(q.root()) })
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| QubeError::schema(path, format!("missing field `{key}`")))
}

fn value_from_json(v: &Value, path: &str) -> Result<CoordinateValue> {
    let obj = v
        .as_object()
        .ok_or_else(|| QubeError::schema(path, "value must be an object"))?;
    let tag = field(obj, "tag", path)?
        .as_str()
        .ok_or_else(|| QubeError::schema(format!("{path}.tag"), "tag must be a string"))?;
    let raw = field(obj, "value", path)?;
    let vpath = format!("{path}.value");
    let bad = |what: &str| QubeError::schema(vpath.clone(), format!("expected {what}"));
    match ValueKind::from_name(tag) {
        Some(ValueKind::Int) => raw
            .as_i64()
            .map(CoordinateValue::Int)
            .ok_or_else(|| bad("an integer")),
        Some(ValueKind::Str) => raw
            .as_str()
            .map(CoordinateValue::str)
            .ok_or_else(|| bad("a string")),
        Some(ValueKind::Date) => raw
            .as_str()
            .and_then(CoordinateValue::from_iso_date)
            .ok_or_else(|| bad("an ISO-8601 date")),
        Some(ValueKind::Timestamp) => raw
            .as_str()
            .and_then(CoordinateValue::from_iso_timestamp)
            .ok_or_else(|| bad("an ISO-8601 timestamp")),
        None => Err(QubeError::schema(
            format!("{path}.tag"),
            format!("unknown tag {tag:?}"),
        )),
    }
}

fn node_from_json(v: &Value, path: &str) -> Result<Arc<QubeNode>> {
    let obj = v
        .as_object()
        .ok_or_else(|| QubeError::schema(path, "node must be an object"))?;
    let dim = field(obj, "dim", path)?
        .as_str()
        .ok_or_else(|| QubeError::schema(format!("{path}.dim"), "dim must be a string"))?;
    let dim = DimensionName::new(dim)
        .map_err(|e| QubeError::schema(format!("{path}.dim"), e.to_string()))?;
    let values = field(obj, "values", path)?
        .as_array()
        .ok_or_else(|| QubeError::schema(format!("{path}.values"), "values must be an array"))?
        .iter()
        .enumerate()
        .map(|(i, v)| value_from_json(v, &format!("{path}.values[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let payload = match obj.get("payload") {
        None | Some(Value::Null) => None,
        Some(p) => Some(p.as_str().and_then(PayloadRef::from_hex).ok_or_else(|| {
            QubeError::schema(format!("{path}.payload"), "payload must be a hex string")
        })?),
    };
    let children = match obj.get("children") {
        None => Vec::new(),
        Some(c) => c
            .as_array()
            .ok_or_else(|| {
                QubeError::schema(format!("{path}.children"), "children must be an array")
            })?
            .iter()
            .enumerate()
            .map(|(i, c)| node_from_json(c, &format!("{path}.children[{i}]")))
            .collect::<Result<Vec<_>>>()?,
    };
    QubeNode::new(dim, values, payload, children)
        .map_err(|e| QubeError::schema(path, e.to_string()))
}

pub fn from_interchange(doc: &Value) -> Result<Qube> {
    let obj = doc
        .as_object()
        .ok_or_else(|| QubeError::schema("$", "document must be an object"))?;
    match field(obj, "version", "$")?.as_str() {
        Some(INTERCHANGE_VERSION) => {}
        other => {
            return Err(QubeError::schema(
                "$.version",
                format!("unsupported version {other:?}, expected {INTERCHANGE_VERSION:?}"),
            ))
        }
    }
    let root = node_from_json(field(obj, "root", "$")?, "$.root")?;
    Qube::from_root(root).map_err(|e| QubeError::schema("$.root", e.to_string()))
}

/// Pretty-printed interchange document.
pub fn to_json_string(q: &Qube) -> String {
    let mut s =
        serde_json::to_string_pretty(&to_interchange(q)).expect("JSON values always serialize");
    s.push('\n');
    s
}

/// Reads either format: JSON when the document starts with `{`, text
/// otherwise.
pub fn parse_any(doc: &str) -> Result<Qube> {
    if doc.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(doc)
            .map_err(|e| QubeError::syntax(e.line(), e.column(), e.to_string()))?;
        from_interchange(&v)
    } else {
        from_text(doc)
    }
}

impl Qube {
    pub fn to_text(&self) -> String {
        to_text(self)
    }
}
