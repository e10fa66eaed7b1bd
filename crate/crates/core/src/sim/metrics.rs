//! Run-wide metric capture: named series of exact statistics sampled on a
//! fixed tick, exported as one plot-ready CSV per series.
//!
//! A series accumulates integer observations inside the current sampling
//! window; on each flush the window collapses into one row
//! `(time_s, count, sum, min, max, mean, stddev)`. Export is byte-stable:
//! identical runs produce identical files.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::monitoring::MetricStat;

/// The global series every workload run emits (plus any extras registered
/// at runtime). Names follow the monitoring registry convention
/// `GLOBAL_<LAYER>_<METRIC>_<UNIT>`.
pub const GLOBAL_SERIES: [&str; 16] = [
    "GLOBAL_PLUGIN_MESSAGING_VIEWINBOX_COUNT_elements",
    "GLOBAL_PLUGIN_FRIENDS_FRIENDSHIPREQUEST_COUNT_elements",
    "GLOBAL_PLUGIN_GROUPS_VIEWGROUP_COUNT_elements",
    "GLOBAL_PLUGIN_PHOTOS_CREATEDALBUM_COUNT_elements",
    "GLOBAL_NETWORK_PASTRY_DATA_READ_RATE_COUNT_kbytes_per_s",
    "NETWORK_PASTRY_DATA_READ_RATE_MAX_COUNT_kbytes_per_s",
    "GLOBAL_STORAGEDISPATCHER_STORAGE_RETRIEVED_DDS_DATA_RATE_MAX_COUNT_bytes_per_sec",
    "GLOBAL_NETWORK_MESSAGES_RECEIVED_RATE_COUNT_messages_per_sec",
    "GLOBAL_STORAGEDISPATCHER_MESSAGE_HOPCOUNT_MEAN_COUNT_elements",
    "GLOBAL_STORAGEDISPATCHER_RETRIEVETIME_MEAN_COUNT_sec",
    "GLOBAL_STORAGEDISPATCHER_STORETIME_MEAN_COUNT_sec",
    "GLOBAL_MESSAGEDISPATCHER_MESSAGES_RECEIVED_RATE_MAX_COUNT_messages_per_sec",
    "GLOBAL_STORAGEDISPATCHER_NUM_STORED_LOCAL_OBJECTS_COUNT_elements",
    "GLOBAL_STORAGEDISPATCHER_NUMINSTORAGE_ELEMENTS_MAX_COUNT_units",
    "GLOBAL_STORAGEDISPATCHER_NUM_STORED_REPLICATIONS_COUNT_elements",
    "GLOBAL_STORAGEDISPATCHER_NUM_STORED_REPLICATIONS_MAX_COUNT_elements",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub time_ms: u64,
    pub stat: MetricStat,
}

#[derive(Debug, Default)]
pub struct MetricLog {
    window: BTreeMap<String, Vec<i64>>,
    rows: BTreeMap<String, Vec<Row>>,
    /// Observations are integers; rendered values divide by this (e.g.
    /// durations observed in ms with scale 1000 render as seconds).
    scale: BTreeMap<String, f64>,
}

impl MetricLog {
    pub fn new() -> MetricLog {
        MetricLog::default()
    }

    /// Pre-registers the standard global series so even an idle run exports
    /// every expected file.
    pub fn with_global_series() -> MetricLog {
        let mut log = MetricLog::new();
        for name in GLOBAL_SERIES {
            log.register(name);
        }
        log
    }

    pub fn register(&mut self, name: &str) {
        self.window.entry(name.to_string()).or_default();
        self.rows.entry(name.to_string()).or_default();
    }

    /// Registers with a display divisor applied at render time.
    pub fn register_scaled(&mut self, name: &str, scale: f64) {
        self.register(name);
        self.scale.insert(name.to_string(), scale);
    }

    pub fn observe(&mut self, name: &str, value: i64) {
        self.rows.entry(name.to_string()).or_default();
        self.window.entry(name.to_string()).or_default().push(value);
    }

    /// Collapses every series' current window into one row stamped `now_ms`.
    pub fn flush(&mut self, now_ms: u64) {
        for (name, values) in self.window.iter_mut() {
            let stat = MetricStat::of(values);
            values.clear();
            self.rows.get_mut(name).expect("registered").push(Row { time_ms: now_ms, stat });
        }
    }

    pub fn series(&self, name: &str) -> &[Row] {
        self.rows.get(name).map(|r| r.as_slice()).unwrap_or(&[])
    }

    pub fn series_names(&self) -> Vec<&str> {
        self.rows.keys().map(|s| s.as_str()).collect()
    }

    /// Renders one series as CSV text.
    pub fn render_csv(&self, name: &str) -> String {
        let scale = self.scale.get(name).copied().unwrap_or(1.0);
        let mut out = String::from("time_s,count,sum,min,max,mean,stddev\n");
        for row in self.series(name) {
            let (min, max) = if row.stat.count == 0 { (0, 0) } else { (row.stat.min, row.stat.max) };
            out.push_str(&format!(
                "{:.3},{},{:.3},{:.3},{:.3},{:.9},{:.9}\n",
                row.time_ms as f64 / 1000.0,
                row.stat.count,
                row.stat.sum as f64 / scale,
                min as f64 / scale,
                max as f64 / scale,
                row.stat.mean() / scale,
                row.stat.variance().sqrt() / scale,
            ));
        }
        out
    }

    /// Writes `<name>.csv` per series into `dir`; returns the paths.
    pub fn export(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for name in self.rows.keys() {
            let path = dir.join(format!("{name}.csv"));
            let mut f = std::fs::File::create(&path)?;
            f.write_all(self.render_csv(name).as_bytes())?;
            paths.push(path);
        }
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_collapse_into_rows_and_reset() {
        let mut log = MetricLog::new();
        log.observe("X", 1);
        log.observe("X", 3);
        log.flush(1000);
        log.observe("X", 10);
        log.flush(2000);
        log.flush(3000); // empty window → zero row
        let rows = log.series("X");
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].stat.count, rows[0].stat.sum, rows[0].stat.min, rows[0].stat.max), (2, 4, 1, 3));
        assert_eq!((rows[1].stat.count, rows[1].stat.sum), (1, 10));
        assert_eq!(rows[2].stat.count, 0);
    }

    #[test]
    fn csv_render_is_stable_and_handles_empty_windows() {
        let mut log = MetricLog::new();
        log.register("EMPTY");
        log.observe("X", 2);
        log.observe("X", 4);
        log.flush(500);
        assert_eq!(
            log.render_csv("EMPTY"),
            "time_s,count,sum,min,max,mean,stddev\n0.500,0,0.000,0.000,0.000,0.000000000,0.000000000\n"
        );
        assert_eq!(
            log.render_csv("X"),
            "time_s,count,sum,min,max,mean,stddev\n0.500,2,6.000,2.000,4.000,3.000000000,1.000000000\n"
        );
        // Re-render is byte-identical.
        assert_eq!(log.render_csv("X"), log.render_csv("X"));
    }

    #[test]
    fn scaled_series_render_in_display_units() {
        let mut log = MetricLog::new();
        log.register_scaled("T", 1000.0); // observed ms, rendered s
        log.observe("T", 1500);
        log.observe("T", 500);
        log.flush(1000);
        assert_eq!(
            log.render_csv("T"),
            "time_s,count,sum,min,max,mean,stddev\n1.000,2,2.000,0.500,1.500,1.000000000,0.500000000\n"
        );
    }

    #[test]
    fn export_writes_one_file_per_series() {
        let mut log = MetricLog::with_global_series();
        log.flush(1000);
        let dir = std::env::temp_dir().join(format!("metrics-test-{}", std::process::id()));
        let paths = log.export(&dir).unwrap();
        assert_eq!(paths.len(), GLOBAL_SERIES.len());
        for name in GLOBAL_SERIES {
            let p = dir.join(format!("{name}.csv"));
            assert!(p.exists(), "{p:?} missing");
            let body = std::fs::read_to_string(&p).unwrap();
            assert!(body.starts_with("time_s,count,sum,min,max,mean,stddev\n"));
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
