//! Ordered JSON tree with fixed-precision number formatting.
//!
//! Numbers carry twelve significant digits so reports diff cleanly across
//! runs and platforms. Non-finite values become `null`.

use qdroop_core::{Complex, Matrix, Vector};

#[derive(Debug, Clone)]
pub enum Json {
    Null,
    Bool(bool),
    Num(f64),
    Int(i64),
    Str(String),
    Arr(Vec<Json>),
    Obj(Vec<(String, Json)>),
}

impl Json {
    pub fn obj() -> Self {
        Json::Obj(Vec::new())
    }

    /// Appends a key; keys keep insertion order.
    pub fn with(mut self, key: &str, value: impl Into<Json>) -> Self {
        self.push(key, value);
        self
    }

    pub fn push(&mut self, key: &str, value: impl Into<Json>) {
        match self {
            Json::Obj(fields) => fields.push((key.to_string(), value.into())),
            _ => panic!("push on a non-object"),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, 0);
        out.push('\n');
        out
    }

    fn write(&self, out: &mut String, indent: usize) {
        match self {
            Json::Null => out.push_str("null"),
            Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Json::Num(x) => out.push_str(&format_number(*x)),
            Json::Int(i) => out.push_str(&i.to_string()),
            Json::Str(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
            Json::Arr(items) => {
                if items
                    .iter()
                    .all(|i| matches!(i, Json::Num(_) | Json::Int(_) | Json::Null))
                {
                    out.push('[');
                    for (k, item) in items.iter().enumerate() {
                        if k > 0 {
                            out.push_str(", ");
                        }
                        item.write(out, indent);
                    }
                    out.push(']');
                    return;
                }
                out.push_str("[\n");
                for (k, item) in items.iter().enumerate() {
                    pad(out, indent + 1);
                    item.write(out, indent + 1);
                    if k + 1 < items.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                pad(out, indent);
                out.push(']');
            }
            Json::Obj(fields) => {
                if fields.is_empty() {
                    out.push_str("{}");
                    return;
                }
                out.push_str("{\n");
                for (k, (key, value)) in fields.iter().enumerate() {
                    pad(out, indent + 1);
                    out.push_str(&serde_json::to_string(key).expect("strings serialize"));
                    out.push_str(": ");
                    value.write(out, indent + 1);
                    if k + 1 < fields.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                pad(out, indent);
                out.push('}');
            }
        }
    }
}

fn pad(out: &mut String, indent: usize) {
    for _ in 0..indent {
        out.push_str("  ");
    }
}

/// Twelve significant digits; scientific notation below 1e-4 and from 1e15.
pub fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return "null".into();
    }
    if x == 0.0 {
        return "0.0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..15).contains(&mag) {
        return format!("{x:.11e}");
    }
    let decimals = (11 - mag).clamp(1, 60) as usize;
    format!("{x:.decimals$}")
}

impl From<f64> for Json {
    fn from(x: f64) -> Self {
        Json::Num(x)
    }
}

impl From<bool> for Json {
    fn from(b: bool) -> Self {
        Json::Bool(b)
    }
}

impl From<usize> for Json {
    fn from(i: usize) -> Self {
        Json::Int(i as i64)
    }
}

impl From<u64> for Json {
    fn from(i: u64) -> Self {
        Json::Int(i as i64)
    }
}

impl From<&str> for Json {
    fn from(s: &str) -> Self {
        Json::Str(s.to_string())
    }
}

impl From<String> for Json {
    fn from(s: String) -> Self {
        Json::Str(s)
    }
}

impl From<&Vector> for Json {
    fn from(v: &Vector) -> Self {
        Json::Arr(v.iter().map(|&x| Json::Num(x)).collect())
    }
}

impl From<&Matrix> for Json {
    fn from(m: &Matrix) -> Self {
        Json::Arr(
            m.row_iter()
                .map(|r| Json::Arr(r.iter().map(|&x| Json::Num(x)).collect()))
                .collect(),
        )
    }
}

impl From<&[f64]> for Json {
    fn from(v: &[f64]) -> Self {
        Json::Arr(v.iter().map(|&x| Json::Num(x)).collect())
    }
}

impl From<&[Complex<f64>]> for Json {
    fn from(v: &[Complex<f64>]) -> Self {
        Json::Arr(
            v.iter()
                .map(|z| Json::obj().with("re", z.re).with("im", z.im))
                .collect(),
        )
    }
}

impl From<&[String]> for Json {
    fn from(v: &[String]) -> Self {
        Json::Arr(v.iter().map(|s| Json::Str(s.clone())).collect())
    }
}

impl<T: Into<Json>> From<Option<T>> for Json {
    fn from(v: Option<T>) -> Self {
        v.map_or(Json::Null, Into::into)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(format_number(5.0 / 6.0), "0.833333333333");
        assert_eq!(format_number(11.0 / 12.0), "0.916666666667");
        assert_eq!(format_number(-0.5), "-0.500000000000");
        assert_eq!(format_number(1234.5), "1234.50000000");
        assert_eq!(format_number(0.0), "0.0");
        assert_eq!(format_number(f64::NAN), "null");
        assert_eq!(format_number(1e-40), "1.00000000000e-40");
        assert_eq!(format_number(1e-9), "1.00000000000e-9");
        assert_eq!(format_number(0.00012), "0.000120000000000");
    }

    #[test]
    fn renders_parseable_json_in_order() {
        let doc = Json::obj()
            .with("b", 1.0)
            .with("a", Json::Arr(vec![Json::Num(0.25), Json::Null]))
            .with("s", "x\"y");
        let text = doc.render();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["s"], "x\"y");
        assert!(text.find("\"b\"").unwrap() < text.find("\"a\"").unwrap());
    }
}
