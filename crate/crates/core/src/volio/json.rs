//! JSON documents: reports, channel maps and fixture sidecars.
//!
//! Floats are written with 17 significant digits so every `f64` reads back
//! bit-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::heads::ChannelMap;
use crate::synth::FixtureSidecar;

pub const SCHEMA_VERSION: u32 = 1;

struct SeventeenDigits<'a>(PrettyFormatter<'a>);

/// `%.17g`, keeping a decimal point or exponent so the value stays a float.
fn g17(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..17).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{exp}");
    }
    let fixed = format!("{v:.*}", (16 - exp).max(0) as usize);
    if fixed.contains('.') {
        let t = fixed.trim_end_matches('0');
        if t.ends_with('.') {
            format!("{t}0")
        } else {
            t.to_string()
        }
    } else {
        format!("{fixed}.0")
    }
}

impl Formatter for SeventeenDigits<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        w.write_all(g17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        w.write_all(g17(f64::from(value)).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty-printed JSON with 17-digit floats and a trailing newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let text = to_json_string(value)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let reader = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(reader)?)
}

/// Envelope for every machine-readable output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    /// Effective configuration; enough to reproduce `result`.
    pub config: Value,
    pub result: Value,
}

impl Report {
    pub fn new(command: &str, config: &impl Serialize, result: &impl Serialize) -> Result<Self> {
        Ok(Report {
            schema_version: SCHEMA_VERSION,
            tool: "tubetopo".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: serde_json::to_value(config)?,
            result: serde_json::to_value(result)?,
        })
    }
}

pub fn write_report(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    write_json(report, path)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report> {
    let value: Value = read_json(path)?;
    let version = value.get("schema_version").and_then(Value::as_u64);
    if version != Some(u64::from(SCHEMA_VERSION)) {
        return Err(violation("$.schema_version", format!("expected {SCHEMA_VERSION}, found {version:?}")));
    }
    serde_json::from_value(value).map_err(|e| violation("$", e.to_string()))
}

fn violation(path: &str, message: impl Into<String>) -> Error {
    Error::SchemaViolation { path: path.into(), message: message.into() }
}

fn count(doc: &Value, key: &str) -> Result<usize> {
    let path = format!("$.{key}");
    let v = doc.get(key).ok_or_else(|| violation(&path, "missing"))?;
    let n = v.as_u64().ok_or_else(|| violation(&path, format!("expected a positive integer, found {v}")))?;
    if n == 0 {
        return Err(violation(&path, "must be positive"));
    }
    usize::try_from(n).map_err(|_| violation(&path, "too large"))
}

fn reals(doc: &Value, key: &str, len: usize) -> Result<Vec<f64>> {
    let path = format!("$.{key}");
    let arr = doc
        .get(key)
        .ok_or_else(|| violation(&path, "missing"))?
        .as_array()
        .ok_or_else(|| violation(&path, "expected an array"))?;
    if arr.len() != len {
        return Err(violation(&path, format!("expected {len} entries, found {}", arr.len())));
    }
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64().ok_or_else(|| violation(&format!("{path}[{i}]"), format!("expected a number, found {v}")))
        })
        .collect()
}

/// Parses `{in, out, weight, bias}`; `weight` is row-major `out x in`.
pub fn parse_channelmap(doc: &Value) -> Result<ChannelMap> {
    if !doc.is_object() {
        return Err(violation("$", "expected an object"));
    }
    let inp = count(doc, "in")?;
    let out = count(doc, "out")?;
    let len = inp.checked_mul(out).ok_or_else(|| violation("$.weight", "in * out overflows"))?;
    let weight = reals(doc, "weight", len)?;
    let bias = reals(doc, "bias", out)?;
    ChannelMap::new(inp, out, weight, bias).map_err(|e| violation("$", e.to_string()))
}

pub fn read_channelmap(path: impl AsRef<Path>) -> Result<ChannelMap> {
    let doc: Value = read_json(path)?;
    parse_channelmap(&doc)
}

pub fn channelmap_to_value(map: &ChannelMap) -> Value {
    json!({
        "in": map.in_channels(),
        "out": map.out_channels(),
        "weight": map.weight(),
        "bias": map.bias(),
    })
}

pub fn write_channelmap(map: &ChannelMap, path: impl AsRef<Path>) -> Result<()> {
    write_json(&channelmap_to_value(map), path)
}

pub fn write_sidecar(sidecar: &FixtureSidecar, path: impl AsRef<Path>) -> Result<()> {
    write_json(sidecar, path)
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<FixtureSidecar> {
    read_json(path)
}
