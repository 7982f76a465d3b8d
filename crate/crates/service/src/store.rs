//! Append-only NDJSON log plus the in-memory per-patient index.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use glucal_core::telemetry::{TelemetryReading, TelemetryRecord};

struct Writer {
    file: File,
    next_seq: u64,
}

pub struct Store {
    path: PathBuf,
    writer: Mutex<Writer>,
    // records per patient, kept sorted by (timestamp, seq)
    index: RwLock<HashMap<String, Vec<TelemetryRecord>>>,
    skipped: usize,
}

impl Store {
    /// Opens or creates the log and rebuilds the index from it.
    /// Lines that do not parse are skipped and logged with their byte offset.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Store> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;

        let mut index: HashMap<String, Vec<TelemetryRecord>> = HashMap::new();
        let mut max_seq = 0;
        let mut skipped = 0;
        let mut offset = 0u64;
        let mut reader = BufReader::new(&file);
        let mut line = String::new();
        let mut ends_clean = true;
        loop {
            line.clear();
            let n = reader.read_line(&mut line)?;
            if n == 0 {
                break;
            }
            ends_clean = line.ends_with('\n');
            let text = line.trim_end_matches(['\n', '\r']);
            if !text.trim().is_empty() {
                match serde_json::from_str::<TelemetryRecord>(text) {
                    Ok(rec) => {
                        max_seq = max_seq.max(rec.seq);
                        index.entry(rec.patient_id.clone()).or_default().push(rec);
                    }
                    Err(e) => {
                        skipped += 1;
                        tracing::warn!(path = %path.display(), offset, "skipping corrupt store line: {e}");
                    }
                }
            }
            offset += n as u64;
        }
        drop(reader);
        for records in index.values_mut() {
            records.sort_by_key(|r| (r.timestamp, r.seq));
        }
        // a torn final write must not swallow the next record
        if !ends_clean {
            file.write_all(b"\n")?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Store {
            path,
            writer: Mutex::new(Writer {
                file,
                next_seq: max_seq + 1,
            }),
            index: RwLock::new(index),
            skipped,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of lines skipped while opening.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Assigns the next sequence number and makes the record durable.
    /// The caller should only acknowledge after this returns Ok.
    pub fn append(&self, reading: TelemetryReading, received_at: i64) -> std::io::Result<TelemetryRecord> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let record = TelemetryRecord::new(reading, w.next_seq, received_at);
        let mut line = serde_json::to_vec(&record).map_err(std::io::Error::other)?;
        line.push(b'\n');
        w.file.write_all(&line)?;
        w.file.sync_data()?;
        w.next_seq += 1;

        // still under the writer lock, so the index sees records in seq order
        let mut index = self.index.write().unwrap_or_else(|e| e.into_inner());
        let list = index.entry(record.patient_id.clone()).or_default();
        let key = (record.timestamp, record.seq);
        let at = list.partition_point(|r| (r.timestamp, r.seq) < key);
        list.insert(at, record.clone());
        Ok(record)
    }

    /// Records for `patient` with timestamp in `[from, to]`, ordered by (timestamp, seq).
    pub fn query(&self, patient: &str, from: i64, to: i64) -> Vec<TelemetryRecord> {
        let index = self.index.read().unwrap_or_else(|e| e.into_inner());
        let Some(list) = index.get(patient) else {
            return Vec::new();
        };
        let lo = list.partition_point(|r| r.timestamp < from);
        let hi = list.partition_point(|r| r.timestamp <= to);
        list[lo..hi.max(lo)].to_vec()
    }

    pub fn len(&self) -> u64 {
        let index = self.index.read().unwrap_or_else(|e| e.into_inner());
        index.values().map(|v| v.len() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads every line of a store file, for inspection and tests.
pub fn read_log(path: impl AsRef<Path>) -> std::io::Result<String> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reading(patient: &str, timestamp: i64) -> TelemetryReading {
        TelemetryReading {
            patient_id: patient.into(),
            device_id: "dev".into(),
            glucose_est: 120.0,
            model_id: "mpr3-rm4".into(),
            timestamp,
        }
    }

    #[test]
    fn fresh_store_starts_at_one() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path().join("s.ndjson")).unwrap();
        assert!(store.query("p", i64::MIN, i64::MAX).is_empty());
        assert_eq!(store.append(reading("p", 10), 10).unwrap().seq, 1);
        assert_eq!(store.append(reading("p", 5), 10).unwrap().seq, 2);
        let got: Vec<u64> = store.query("p", 0, 100).iter().map(|r| r.seq).collect();
        assert_eq!(got, [2, 1]);
    }

    #[test]
    fn range_is_inclusive() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path().join("s.ndjson")).unwrap();
        for t in [100, 110, 120] {
            store.append(reading("p", t), 200).unwrap();
        }
        let ts: Vec<i64> = store.query("p", 100, 110).iter().map(|r| r.timestamp).collect();
        assert_eq!(ts, [100, 110]);
        assert!(store.query("p", 121, 130).is_empty());
        assert!(store.query("q", 0, 1000).is_empty());
    }

    #[test]
    fn reopen_skips_corrupt_lines_and_continues_seq() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ndjson");
        {
            let store = Store::open(&path).unwrap();
            store.append(reading("p", 1), 1).unwrap();
            store.append(reading("p", 2), 2).unwrap();
        }
        {
            let mut f = OpenOptions::new().append(true).open(&path).unwrap();
            f.write_all(b"{not json}\n{\"seq\":").unwrap();
        }
        let store = Store::open(&path).unwrap();
        assert_eq!(store.skipped(), 2);
        assert_eq!(store.len(), 2);
        assert_eq!(store.append(reading("p", 3), 3).unwrap().seq, 3);
        drop(store);
        let store = Store::open(&path).unwrap();
        assert_eq!(store.len(), 3);
        let log = read_log(&path).unwrap();
        assert!(log.ends_with('\n'));
    }
}
