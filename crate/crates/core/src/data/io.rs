//! JSONL dataset files plus a JSON sidecar header.
//!
//! ```text
//! {"id": "s0", "label": 1, "static": [63.0], "events": [[0, 0.5, 1.2], [3, 0.5, -0.1]]}
//! ```
//! Header: `{"M": 6, "C": 2, "T_max": 30, "sensor_names": [...], "attr_names": [...]}`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, ObservationEvent, SampleRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    #[serde(rename = "M")]
    pub n_sensors: usize,
    #[serde(rename = "C")]
    pub n_classes: usize,
    #[serde(rename = "T_max")]
    pub t_max: usize,
    #[serde(default)]
    pub sensor_names: Option<Vec<String>>,
    #[serde(default)]
    pub attr_names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    label: i64,
    #[serde(rename = "static")]
    static_attrs: Vec<f64>,
    events: Vec<(i64, f64, f64)>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

pub fn load_header(path: &Path) -> Result<DatasetHeader, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// Parse and validate a dataset. Diagnostics name the offending line (1-based).
pub fn load_jsonl(data: &Path, header: &Path) -> Result<Dataset, DataError> {
    let header = load_header(header)?;
    let file = fs::File::open(data).map_err(|e| io_err(data, e))?;
    let mut samples = Vec::new();
    let mut attr_dim = header.attr_names.as_ref().map(Vec::len);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| io_err(data, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |msg: String| DataError::Line { line: lineno, msg };
        let raw: Line = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        if raw.label < 0 || raw.label as usize >= header.n_classes {
            return Err(fail(format!("label {} outside [0, {})", raw.label, header.n_classes)));
        }
        let mut events = Vec::with_capacity(raw.events.len());
        for (j, &(sensor, time, value)) in raw.events.iter().enumerate() {
            if sensor < 0 {
                return Err(fail(format!("event {j}: negative sensor id {sensor}")));
            }
            events.push(ObservationEvent {
                sensor: sensor as usize,
                time,
                value,
            });
        }
        let sample = SampleRecord {
            id: raw.id,
            events,
            static_attrs: raw.static_attrs,
            label: raw.label as usize,
        };
        let dim = *attr_dim.get_or_insert(sample.static_attrs.len());
        let probe = Dataset {
            samples: vec![],
            n_sensors: header.n_sensors,
            n_classes: header.n_classes,
            t_max: header.t_max,
            sensor_names: None,
            attr_names: None,
        };
        probe.check_sample(&sample, dim).map_err(fail)?;
        samples.push(sample);
    }
    Dataset::new(header, samples)
}

/// Write the canonical form: one sample per line, header alongside.
pub fn save_jsonl(ds: &Dataset, data: &Path, header: &Path) -> Result<(), DataError> {
    let file = fs::File::create(data).map_err(|e| io_err(data, e))?;
    let mut w = BufWriter::new(file);
    for s in &ds.samples {
        let line = Line {
            id: s.id.clone(),
            label: s.label as i64,
            static_attrs: s.static_attrs.clone(),
            events: s.events.iter().map(|e| (e.sensor as i64, e.time, e.value)).collect(),
        };
        let text = serde_json::to_string(&line).map_err(|e| io_err(data, e))?;
        writeln!(w, "{text}").map_err(|e| io_err(data, e))?;
    }
    w.flush().map_err(|e| io_err(data, e))?;
    let h = serde_json::to_string_pretty(&ds.header()).map_err(|e| io_err(header, e))?;
    fs::write(header, h + "\n").map_err(|e| io_err(header, e))
}
