//! Self-describing result rows and their CSV/JSON serialization.

use std::io::Write;

use serde_json::{Map, Value};

/// Bumped whenever columns change meaning or disappear.
pub const SCHEMA_VERSION: u32 = 1;

/// `git describe` of the build, or `unknown` outside a checkout.
pub const BUILD_VERSION: &str = env!("CLUP_GIT_DESCRIBE");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Prediction,
    Simulation,
    Stationary,
    Scan,
    FirstIter,
    Ml,
}

impl RecordKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordKind::Prediction => "prediction",
            RecordKind::Simulation => "simulation",
            RecordKind::Stationary => "stationary",
            RecordKind::Scan => "scan",
            RecordKind::FirstIter => "first_iter",
            RecordKind::Ml => "ml",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Field {
    fn csv(&self) -> String {
        match self {
            Field::Num(v) => v.to_string(),
            Field::Int(v) => v.to_string(),
            Field::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Field::Num(v) => serde_json::Number::from_f64(*v).map(Value::Number).unwrap_or(Value::Null),
            Field::Int(v) => Value::from(*v),
            Field::Text(s) => Value::from(s.as_str()),
        }
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Num(v)
    }
}

impl From<u64> for Field {
    fn from(v: u64) -> Self {
        Field::Int(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as u64)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    /// Unix seconds; only set on request so reruns stay byte-identical.
    pub timestamp: Option<u64>,
}

/// One output row: the inputs needed to replay it, named outputs, and an
/// error message when the row could not be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub kind: RecordKind,
    pub inputs: Vec<(String, Field)>,
    pub outputs: Vec<(String, f64)>,
    pub error: Option<String>,
    pub provenance: Provenance,
}

impl ResultRecord {
    pub fn new(kind: RecordKind, provenance: &Provenance) -> Self {
        ResultRecord {
            kind,
            inputs: Vec::new(),
            outputs: Vec::new(),
            error: None,
            provenance: provenance.clone(),
        }
    }

    pub fn input(mut self, name: &str, value: impl Into<Field>) -> Self {
        self.inputs.push((name.to_string(), value.into()));
        self
    }

    pub fn output(&mut self, name: &str, value: f64) {
        self.outputs.push((name.to_string(), value));
    }

    pub fn fail(&mut self, message: impl ToString) {
        self.error = Some(message.to_string());
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.outputs.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("kind".into(), Value::from(self.kind.as_str()));
        m.insert(
            "inputs".into(),
            Value::Object(self.inputs.iter().map(|(k, v)| (k.clone(), v.json())).collect()),
        );
        m.insert(
            "outputs".into(),
            Value::Object(self.outputs.iter().map(|(k, v)| (k.clone(), Field::Num(*v).json())).collect()),
        );
        m.insert("error".into(), self.error.as_deref().map(Value::from).unwrap_or(Value::Null));
        let mut p = Map::new();
        p.insert("version".into(), Value::from(self.provenance.version.as_str()));
        p.insert("seed".into(), Value::from(self.provenance.seed));
        if let Some(t) = self.provenance.timestamp {
            p.insert("timestamp".into(), Value::from(t));
        }
        m.insert("provenance".into(), Value::Object(p));
        Value::Object(m)
    }
}

/// Column order: kind, inputs and outputs in first-seen order, then error
/// and provenance. Missing cells stay empty.
fn columns(records: &[ResultRecord]) -> (Vec<String>, Vec<String>) {
    let mut ins: Vec<String> = Vec::new();
    let mut outs: Vec<String> = Vec::new();
    for r in records {
        for (k, _) in &r.inputs {
            if !ins.contains(k) {
                ins.push(k.clone());
            }
        }
        for (k, _) in &r.outputs {
            if !outs.contains(k) {
                outs.push(k.clone());
            }
        }
    }
    (ins, outs)
}

pub fn write_csv<W: Write>(out: W, command: &str, records: &[ResultRecord]) -> std::io::Result<()> {
    let mut out = out;
    writeln!(out, "# clup records schema v{SCHEMA_VERSION} command={command}")?;
    let (ins, outs) = columns(records);
    let with_time = records.iter().any(|r| r.provenance.timestamp.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = vec!["kind"];
    header.extend(ins.iter().map(String::as_str));
    header.extend(outs.iter().map(String::as_str));
    header.extend(["error", "version", "seed"]);
    if with_time {
        header.push("timestamp");
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.kind.as_str().to_string()];
        for k in &ins {
            row.push(r.inputs.iter().find(|(n, _)| n == k).map(|(_, v)| v.csv()).unwrap_or_default());
        }
        for k in &outs {
            row.push(r.get(k).map(|v| v.to_string()).unwrap_or_default());
        }
        row.push(r.error.clone().unwrap_or_default());
        row.push(r.provenance.version.clone());
        row.push(r.provenance.seed.to_string());
        if with_time {
            row.push(r.provenance.timestamp.map(|t| t.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn write_json<W: Write>(mut out: W, command: &str, records: &[ResultRecord]) -> std::io::Result<()> {
    let doc = serde_json::json!({
        "schema": SCHEMA_VERSION,
        "command": command,
        "records": records.iter().map(ResultRecord::to_json).collect::<Vec<_>>(),
    });
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out)
}
