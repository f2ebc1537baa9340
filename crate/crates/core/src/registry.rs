//! Device registry and the hierarchical performance history kept by the
//! central server.
//!
//! History is indexed `task_type -> device_id -> records ordered by time`
//! and is append-only. When opened with a log path, every append is written
//! as one JSON object per line with the field order
//! `timestamp, task_type, device_id, processing_speed, completion_accuracy, outcome`
//! and flushed before the call returns.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use taas_wire::Locator;
use thiserror::Error;

use crate::requirements::HistoryDimension;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("device id must be non-empty")]
    EmptyDeviceId,
    #[error("device `{0}` registers no task types")]
    NoTaskTypes(String),
    #[error(transparent)]
    MalformedAddress(#[from] taas_wire::WireError),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("invalid performance record: {0}")]
    InvalidRecord(String),
    #[error("invalid history query: {0}")]
    InvalidQuery(String),
    #[error("history log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: String,
    pub agent_address: Locator,
    pub supported_task_types: BTreeSet<String>,
}

impl DeviceRecord {
    pub fn new<I, S>(device_id: &str, agent_address: &str, task_types: I) -> Result<Self, RegistryError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Ok(Self {
            device_id: device_id.to_string(),
            agent_address: agent_address.parse()?,
            supported_task_types: task_types.into_iter().map(Into::into).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Terminated,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    pub timestamp: f64,
    pub task_type: String,
    pub device_id: String,
    /// MB per second.
    pub processing_speed: f64,
    pub completion_accuracy: f64,
    pub outcome: Outcome,
}

impl PerformanceRecord {
    pub fn validate(&self) -> Result<(), RegistryError> {
        let bad = |m: &str| Err(RegistryError::InvalidRecord(m.to_string()));
        if !self.timestamp.is_finite() {
            return bad("timestamp must be finite");
        }
        if !(self.processing_speed.is_finite() && self.processing_speed >= 0.0) {
            return bad("processing_speed must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.completion_accuracy) {
            return bad("completion_accuracy must lie in [0, 1]");
        }
        if self.task_type.is_empty() || self.device_id.is_empty() {
            return bad("task_type and device_id must be non-empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryQuery {
    pub task_type: String,
    /// Seconds, ending at query time.
    pub window: f64,
    pub dimensions: BTreeSet<HistoryDimension>,
}

impl HistoryQuery {
    pub fn new(
        task_type: impl Into<String>,
        window: f64,
        dimensions: impl IntoIterator<Item = HistoryDimension>,
    ) -> Result<Self, RegistryError> {
        let q = Self {
            task_type: task_type.into(),
            window,
            dimensions: dimensions.into_iter().collect(),
        };
        if !(q.window > 0.0) {
            return Err(RegistryError::InvalidQuery("window must be positive".into()));
        }
        if q.dimensions.is_empty() {
            return Err(RegistryError::InvalidQuery("at least one dimension is required".into()));
        }
        Ok(q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrySnapshot {
    pub trust_service: Locator,
    pub devices: Vec<DeviceRecord>,
    pub record_count: usize,
}

type HistoryIndex = BTreeMap<String, BTreeMap<String, Vec<PerformanceRecord>>>;

pub struct Registry {
    trust_service: RwLock<Locator>,
    devices: RwLock<BTreeMap<String, DeviceRecord>>,
    history: RwLock<HistoryIndex>,
    log: Mutex<Option<(PathBuf, File)>>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("trust_service", &self.trust_service_address())
            .field("devices", &self.devices.read().unwrap().len())
            .finish()
    }
}

fn insert_ordered(index: &mut HistoryIndex, rec: PerformanceRecord) {
    let series = index
        .entry(rec.task_type.clone())
        .or_default()
        .entry(rec.device_id.clone())
        .or_default();
    let at = series.partition_point(|r| r.timestamp <= rec.timestamp);
    series.insert(at, rec);
}

impl Registry {
    /// In-memory registry. `trust_service` is the address handed back to
    /// registering devices.
    pub fn new(trust_service: Locator) -> Self {
        Self {
            trust_service: RwLock::new(trust_service),
            devices: RwLock::default(),
            history: RwLock::default(),
            log: Mutex::new(None),
        }
    }

    /// Registry backed by an append-only history log. Existing records in
    /// the log are loaded; new appends are written through.
    pub fn with_log(trust_service: Locator, path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref().to_path_buf();
        let mut index = HistoryIndex::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: PerformanceRecord =
                    serde_json::from_str(&line).map_err(|e| RegistryError::CorruptLog {
                        line: n + 1,
                        message: e.to_string(),
                    })?;
                rec.validate().map_err(|e| RegistryError::CorruptLog {
                    line: n + 1,
                    message: e.to_string(),
                })?;
                insert_ordered(&mut index, rec);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            trust_service: RwLock::new(trust_service),
            devices: RwLock::default(),
            history: RwLock::new(index),
            log: Mutex::new(Some((path, file))),
        })
    }

    pub fn trust_service_address(&self) -> Locator {
        self.trust_service.read().unwrap().clone()
    }

    /// Updates the address handed to registering devices, e.g. once a
    /// `tcp:host:0` service has been bound.
    pub fn set_trust_service_address(&self, at: Locator) {
        *self.trust_service.write().unwrap() = at;
    }

    /// Registers (or re-registers) a device and returns the trust service
    /// address. No session is kept open with the device.
    pub fn register_device(&self, rec: DeviceRecord) -> Result<Locator, RegistryError> {
        if rec.device_id.is_empty() {
            return Err(RegistryError::EmptyDeviceId);
        }
        if rec.supported_task_types.is_empty() {
            return Err(RegistryError::NoTaskTypes(rec.device_id));
        }
        self.devices.write().unwrap().insert(rec.device_id.clone(), rec);
        Ok(self.trust_service_address())
    }

    pub fn deregister_device(&self, device_id: &str) -> Option<DeviceRecord> {
        self.devices.write().unwrap().remove(device_id)
    }

    pub fn device(&self, device_id: &str) -> Option<DeviceRecord> {
        self.devices.read().unwrap().get(device_id).cloned()
    }

    /// Registered devices supporting `task_type`, ordered by device id.
    pub fn devices_supporting(&self, task_type: &str) -> Vec<DeviceRecord> {
        self.devices
            .read()
            .unwrap()
            .values()
            .filter(|d| d.supported_task_types.contains(task_type))
            .cloned()
            .collect()
    }

    pub fn known_task_types(&self) -> BTreeSet<String> {
        self.devices
            .read()
            .unwrap()
            .values()
            .flat_map(|d| d.supported_task_types.iter().cloned())
            .collect()
    }

    pub fn append_performance(&self, rec: PerformanceRecord) -> Result<(), RegistryError> {
        rec.validate()?;
        if !self.devices.read().unwrap().contains_key(&rec.device_id) {
            return Err(RegistryError::UnknownDevice(rec.device_id));
        }
        let mut history = self.history.write().unwrap();
        if let Some((_, file)) = self.log.lock().unwrap().as_mut() {
            let mut line = serde_json::to_string(&rec).expect("records serialize");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        insert_ordered(&mut history, rec);
        Ok(())
    }

    /// Records of `device_id` for the query's task type with timestamps in
    /// `[now - window, now]`, oldest first.
    pub fn query_history(
        &self,
        q: &HistoryQuery,
        device_id: &str,
        now: f64,
    ) -> Result<Vec<PerformanceRecord>, RegistryError> {
        if !self.devices.read().unwrap().contains_key(device_id) {
            return Err(RegistryError::UnknownDevice(device_id.to_string()));
        }
        Ok(self.window_slice(&q.task_type, device_id, q.window, now))
    }

    fn window_slice(&self, task_type: &str, device_id: &str, window: f64, now: f64) -> Vec<PerformanceRecord> {
        let history = self.history.read().unwrap();
        let Some(series) = history.get(task_type).and_then(|d| d.get(device_id)) else {
            return Vec::new();
        };
        let lo = series.partition_point(|r| r.timestamp < now - window);
        let hi = series.partition_point(|r| r.timestamp <= now);
        series[lo..hi.max(lo)].to_vec()
    }

    /// Every record of a device across task types and all time.
    pub fn device_history(&self, device_id: &str) -> Vec<PerformanceRecord> {
        self.history
            .read()
            .unwrap()
            .values()
            .filter_map(|by_device| by_device.get(device_id))
            .flatten()
            .cloned()
            .collect()
    }

    pub fn all_records(&self) -> Vec<PerformanceRecord> {
        self.history
            .read()
            .unwrap()
            .values()
            .flat_map(|d| d.values().flatten())
            .cloned()
            .collect()
    }

    pub fn log_path(&self) -> Option<PathBuf> {
        self.log.lock().unwrap().as_ref().map(|(p, _)| p.clone())
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        RegistrySnapshot {
            trust_service: self.trust_service_address(),
            devices: self.devices.read().unwrap().values().cloned().collect(),
            record_count: self.history.read().unwrap().values().flat_map(|d| d.values()).map(Vec::len).sum(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> Registry {
        Registry::new(Locator::mem("trust"))
    }

    fn rec(t: f64, ty: &str, dev: &str, speed: f64, acc: f64) -> PerformanceRecord {
        PerformanceRecord {
            timestamp: t,
            task_type: ty.into(),
            device_id: dev.into(),
            processing_speed: speed,
            completion_accuracy: acc,
            outcome: Outcome::Completed,
        }
    }

    #[test]
    fn registration_returns_trust_address() {
        let r = registry();
        let addr = r
            .register_device(DeviceRecord::new("a_j", "mem:aj", ["facial recognition"]).unwrap())
            .unwrap();
        assert_eq!(addr, Locator::mem("trust"));
    }

    #[test]
    fn empty_task_types_rejected() {
        let r = registry();
        let err = r
            .register_device(DeviceRecord::new("a_j", "mem:aj", Vec::<String>::new()).unwrap())
            .unwrap_err();
        assert!(matches!(err, RegistryError::NoTaskTypes(_)));
    }

    #[test]
    fn malformed_address_rejected() {
        assert!(matches!(
            DeviceRecord::new("a_j", "aj", ["x"]),
            Err(RegistryError::MalformedAddress(_))
        ));
    }

    #[test]
    fn reregistration_replaces_address() {
        let r = registry();
        r.register_device(DeviceRecord::new("a_j", "mem:old", ["x"]).unwrap()).unwrap();
        r.register_device(DeviceRecord::new("a_j", "mem:new", ["x", "y"]).unwrap()).unwrap();
        let d = r.device("a_j").unwrap();
        assert_eq!(d.agent_address, Locator::mem("new"));
        assert_eq!(r.devices_supporting("y").len(), 1);
    }

    #[test]
    fn supporting_is_sorted_and_tracks_deregistration() {
        let r = registry();
        for id in ["a_l", "a_j", "a_k"] {
            r.register_device(DeviceRecord::new(id, &format!("mem:{id}"), ["facial recognition"]).unwrap())
                .unwrap();
        }
        r.register_device(DeviceRecord::new("a_m", "mem:a_m", ["virus scanning"]).unwrap()).unwrap();
        let ids = |v: Vec<DeviceRecord>| v.into_iter().map(|d| d.device_id).collect::<Vec<_>>();
        assert_eq!(ids(r.devices_supporting("facial recognition")), ["a_j", "a_k", "a_l"]);
        assert!(r.devices_supporting("unknown type").is_empty());
        r.deregister_device("a_k");
        assert_eq!(ids(r.devices_supporting("facial recognition")), ["a_j", "a_l"]);
    }

    #[test]
    fn append_validates() {
        let r = registry();
        r.register_device(DeviceRecord::new("a_j", "mem:aj", ["x"]).unwrap()).unwrap();
        assert!(matches!(
            r.append_performance(rec(1.0, "x", "a_j", 10.0, 1.2)),
            Err(RegistryError::InvalidRecord(_))
        ));
        assert!(matches!(
            r.append_performance(rec(1.0, "x", "a_j", -1.0, 1.0)),
            Err(RegistryError::InvalidRecord(_))
        ));
        assert!(matches!(
            r.append_performance(rec(1.0, "x", "ghost", 1.0, 1.0)),
            Err(RegistryError::UnknownDevice(_))
        ));
        r.append_performance(rec(1.0, "x", "a_j", 10.0, 1.0)).unwrap();
        let q = HistoryQuery::new("x", 10.0, [HistoryDimension::ProcessingSpeed]).unwrap();
        assert_eq!(r.query_history(&q, "a_j", 5.0).unwrap().len(), 1);
    }

    #[test]
    fn window_bounds_are_inclusive() {
        let r = registry();
        r.register_device(DeviceRecord::new("d", "mem:d", ["x"]).unwrap()).unwrap();
        for t in [0.0, 10.0, 20.0, 30.0] {
            r.append_performance(rec(t, "x", "d", 1.0, 1.0)).unwrap();
        }
        let q = HistoryQuery::new("x", 20.0, HistoryDimension::ALL).unwrap();
        let got: Vec<f64> = r.query_history(&q, "d", 30.0).unwrap().iter().map(|r| r.timestamp).collect();
        assert_eq!(got, [10.0, 20.0, 30.0]);
        let tiny = HistoryQuery::new("x", 1e-9, HistoryDimension::ALL).unwrap();
        assert!(r.query_history(&tiny, "d", 25.0).unwrap().is_empty());
    }

    #[test]
    fn out_of_order_appends_stay_sorted() {
        let r = registry();
        r.register_device(DeviceRecord::new("d", "mem:d", ["x"]).unwrap()).unwrap();
        for t in [5.0, 1.0, 3.0] {
            r.append_performance(rec(t, "x", "d", t, 1.0)).unwrap();
        }
        let q = HistoryQuery::new("x", 100.0, HistoryDimension::ALL).unwrap();
        let got: Vec<f64> = r.query_history(&q, "d", 10.0).unwrap().iter().map(|r| r.timestamp).collect();
        assert_eq!(got, [1.0, 3.0, 5.0]);
    }

    #[test]
    fn query_validation() {
        assert!(HistoryQuery::new("x", 0.0, HistoryDimension::ALL).is_err());
        assert!(HistoryQuery::new("x", 1.0, []).is_err());
        let r = registry();
        let q = HistoryQuery::new("x", 1.0, HistoryDimension::ALL).unwrap();
        assert!(matches!(r.query_history(&q, "nobody", 0.0), Err(RegistryError::UnknownDevice(_))));
    }

    #[test]
    fn log_line_field_order() {
        let line = serde_json::to_string(&rec(1.5, "facial recognition", "a_j", 10.0, 1.0)).unwrap();
        assert_eq!(
            line,
            r#"{"timestamp":1.5,"task_type":"facial recognition","device_id":"a_j","processing_speed":10.0,"completion_accuracy":1.0,"outcome":"completed"}"#
        );
    }
}
