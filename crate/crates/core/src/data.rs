//! Sample records, datasets and their CSV form.
//!
//! One CSV row per sample with the fixed header
//! `sample_id,age_years,sex,cohort,prandial,v1,v2,v3,ref_glucose,timestamp`.
//! Voltages are written with six decimals, reference glucose with two.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CSV_HEADER: [&str; 10] = [
    "sample_id",
    "age_years",
    "sex",
    "cohort",
    "prandial",
    "v1",
    "v2",
    "v3",
    "ref_glucose",
    "timestamp",
];

/// Per-channel detector measurement ranges in volts (channels 1..3).
pub const CHANNEL_RANGES: [(f64, f64); 3] = [(3.2, 4.68), (0.8, 4.7), (0.5, 4.7)];
/// Valid reference glucose range in mg/dl.
pub const GLUCOSE_RANGE: (f64, f64) = (70.0, 450.0);
pub const AGE_RANGE: (u32, u32) = (1, 120);

macro_rules! lowercase_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {} {:?}", stringify!($name).to_lowercase(), other)),
                }
            }
        }
    };
}

lowercase_enum!(Sex { Male => "male", Female => "female" });
lowercase_enum!(Cohort {
    Healthy => "healthy",
    Prediabetic => "prediabetic",
    Diabetic => "diabetic",
});
lowercase_enum!(Prandial {
    Fasting => "fasting",
    Postprandial => "postprandial",
    Random => "random",
});
lowercase_enum!(
    /// Where a dataset came from. Not persisted in CSV; loaded data is `Imported`.
    Provenance { Synthetic => "synthetic", Imported => "imported" }
);

/// One detector channel.
///
/// Channel 1 is 1300 nm absorption, channel 2 is 940 nm absorption and
/// channel 3 is 940 nm reflectance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "v1")]
    V1,
    #[serde(rename = "v2")]
    V2,
    #[serde(rename = "v3")]
    V3,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::V1, Channel::V2, Channel::V3];

    pub fn index(self) -> usize {
        match self {
            Channel::V1 => 0,
            Channel::V2 => 1,
            Channel::V3 => 2,
        }
    }

    pub fn range(self) -> (f64, f64) {
        CHANNEL_RANGES[self.index()]
    }
}

/// Channel subsets studied for calibration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelSet {
    /// 940 nm absorption + 940 nm reflectance.
    Rm1,
    /// 1300 nm absorption + 940 nm absorption.
    Rm2,
    /// 1300 nm absorption + 940 nm reflectance.
    Rm3,
    /// All three channels.
    Rm4,
}

impl ChannelSet {
    pub const ALL: [ChannelSet; 4] = [
        ChannelSet::Rm1,
        ChannelSet::Rm2,
        ChannelSet::Rm3,
        ChannelSet::Rm4,
    ];

    pub fn channels(self) -> &'static [Channel] {
        match self {
            ChannelSet::Rm1 => &[Channel::V2, Channel::V3],
            ChannelSet::Rm2 => &[Channel::V1, Channel::V2],
            ChannelSet::Rm3 => &[Channel::V1, Channel::V3],
            ChannelSet::Rm4 => &[Channel::V1, Channel::V2, Channel::V3],
        }
    }

    pub fn len(self) -> usize {
        self.channels().len()
    }

    /// Picks this set's voltages out of a full `(v1, v2, v3)` triple.
    pub fn select(self, volts: [f64; 3]) -> Vec<f64> {
        self.channels().iter().map(|c| volts[c.index()]).collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelSet::Rm1 => "rm1",
            ChannelSet::Rm2 => "rm2",
            ChannelSet::Rm3 => "rm3",
            ChannelSet::Rm4 => "rm4",
        }
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

impl FromStr for ChannelSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rm1" => Ok(ChannelSet::Rm1),
            "rm2" => Ok(ChannelSet::Rm2),
            "rm3" => Ok(ChannelSet::Rm3),
            "rm4" => Ok(ChannelSet::Rm4),
            other => Err(format!("unknown channel set {other:?} (expected rm1..rm4)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub age_years: u32,
    pub sex: Sex,
    pub cohort: Cohort,
    pub prandial: Prandial,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub ref_glucose: f64,
    pub timestamp: i64,
}

impl SampleRecord {
    pub fn volts(&self) -> [f64; 3] {
        [self.v1, self.v2, self.v3]
    }

    /// Checks the range invariants, returning the first violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.sample_id.is_empty() {
            return Err("empty sample_id".into());
        }
        for (i, (v, (lo, hi))) in self.volts().iter().zip(CHANNEL_RANGES).enumerate() {
            if !(lo..=hi).contains(v) {
                return Err(format!("channel {} out of range", i + 1));
            }
        }
        let (lo, hi) = GLUCOSE_RANGE;
        if !(lo..=hi).contains(&self.ref_glucose) {
            return Err("ref_glucose out of range".into());
        }
        if !(AGE_RANGE.0..=AGE_RANGE.1).contains(&self.age_years) {
            return Err("age_years out of range".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub provenance: Provenance,
}

/// Result of [`load_dataset`]: the dataset plus the number of rows dropped
/// in lenient mode.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub dataset: Dataset,
    pub dropped: usize,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate sample ids.
    pub fn new(records: Vec<SampleRecord>, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::DuplicateId(r.sample_id.clone()));
            }
        }
        Ok(Dataset {
            records,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ref_glucose).collect()
    }

    /// Rows of selected channel voltages.
    pub fn inputs(&self, channels: ChannelSet) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|r| channels.select(r.volts()))
            .collect()
    }

    /// Subset by record index, preserving the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            provenance: self.provenance,
        }
    }

    /// Records sorted by sample id.
    pub fn canonical(&self) -> Dataset {
        let mut records = self.records.clone();
        records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        Dataset {
            records,
            provenance: self.provenance,
        }
    }
}

fn parse_field<T: FromStr>(row: &csv::StringRecord, idx: usize, line: u64, what: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = row.get(idx).unwrap_or("").trim();
    raw.parse::<T>().map_err(|e| Error::MalformedRow {
        line,
        reason: format!("{what} {raw:?}: {e}"),
    })
}

fn parse_volts(row: &csv::StringRecord, idx: usize, line: u64, channel: usize) -> Result<f64> {
    let raw = row.get(idx).unwrap_or("").trim();
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::MalformedRow {
            line,
            reason: format!("non-numeric voltage {raw:?} in channel {channel}"),
        }),
    }
}

fn parse_row(row: &csv::StringRecord, line: u64) -> Result<SampleRecord> {
    if row.len() != CSV_HEADER.len() {
        return Err(Error::MalformedRow {
            line,
            reason: format!("expected {} fields, got {}", CSV_HEADER.len(), row.len()),
        });
    }
    Ok(SampleRecord {
        sample_id: row[0].to_string(),
        age_years: parse_field(row, 1, line, "age_years")?,
        sex: parse_field(row, 2, line, "sex")?,
        cohort: parse_field(row, 3, line, "cohort")?,
        prandial: parse_field(row, 4, line, "prandial")?,
        v1: parse_volts(row, 5, line, 1)?,
        v2: parse_volts(row, 6, line, 2)?,
        v3: parse_volts(row, 7, line, 3)?,
        ref_glucose: parse_field(row, 8, line, "ref_glucose")?,
        timestamp: parse_field(row, 9, line, "timestamp")?,
    })
}

/// Reads a sample CSV.
///
/// In strict mode the first invariant violation or duplicate id aborts the
/// load. In lenient mode such rows are dropped and counted. Rows that do
/// not parse at all are an error in both modes.
pub fn load_dataset(path: impl AsRef<Path>, strict: bool) -> Result<Loaded> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::MalformedRow {
            line: 1,
            reason: format!("unexpected header, expected `{}`", CSV_HEADER.join(",")),
        });
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut dropped = 0;
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let record = parse_row(&row, line)?;
        let verdict = record.check().and_then(|()| {
            if seen.contains(&record.sample_id) {
                Err(format!("duplicate sample_id {:?}", record.sample_id))
            } else {
                Ok(())
            }
        });
        match verdict {
            Ok(()) => {
                seen.insert(record.sample_id.clone());
                records.push(record);
            }
            Err(reason) if strict => {
                if seen.contains(&record.sample_id) {
                    return Err(Error::DuplicateId(record.sample_id));
                }
                return Err(Error::InvalidRecord { line, reason });
            }
            Err(reason) => {
                tracing::debug!(line, %reason, "dropping row");
                dropped += 1;
            }
        }
    }

    Ok(Loaded {
        dataset: Dataset {
            records,
            provenance: Provenance::Imported,
        },
        dropped,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::MalformedRow {
            line,
            reason: format!("{other:?}"),
        },
    }
}

/// Writes the dataset as CSV (LF line endings, fixed precision).
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn write_dataset<W: Write>(ds: &Dataset, out: W) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &ds.records {
        w.write_record([
            r.sample_id.clone(),
            r.age_years.to_string(),
            r.sex.to_string(),
            r.cohort.to_string(),
            r.prandial.to_string(),
            format!("{:.6}", r.v1),
            format!("{:.6}", r.v2),
            format!("{:.6}", r.v3),
            format!("{:.2}", r.ref_glucose),
            r.timestamp.to_string(),
        ])?;
    }
    w.flush()
}

/// Counts by cohort x sex with age ranges.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CohortSummary {
    /// Indexed `[cohort][sex]` in `Cohort::ALL` / `Sex::ALL` order.
    pub counts: [[usize; 2]; 3],
    pub age_ranges: [[Option<(u32, u32)>; 2]; 3],
}

impl CohortSummary {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn by_sex(&self, sex: Sex) -> usize {
        self.counts.iter().map(|row| row[sex_index(sex)]).sum()
    }

    pub fn by_cohort(&self, cohort: Cohort) -> usize {
        self.counts[cohort_index(cohort)].iter().sum()
    }

    pub fn count(&self, cohort: Cohort, sex: Sex) -> usize {
        self.counts[cohort_index(cohort)][sex_index(sex)]
    }
}

impl fmt::Display for CohortSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>6} {:>10} {:>6} {:>10}", "cohort", "male", "ages", "female", "ages")?;
        let ages = |r: Option<(u32, u32)>| match r {
            Some((lo, hi)) => format!("{lo}-{hi}"),
            None => "-".to_string(),
        };
        for (c, cohort) in Cohort::ALL.iter().enumerate() {
            writeln!(
                f,
                "{:<12} {:>6} {:>10} {:>6} {:>10}",
                cohort.as_str(),
                self.counts[c][0],
                ages(self.age_ranges[c][0]),
                self.counts[c][1],
                ages(self.age_ranges[c][1]),
            )?;
        }
        write!(
            f,
            "{:<12} {:>6} {:>10} {:>6} {:>10}",
            "total",
            self.by_sex(Sex::Male),
            "",
            self.by_sex(Sex::Female),
            self.total()
        )
    }
}

fn cohort_index(c: Cohort) -> usize {
    match c {
        Cohort::Healthy => 0,
        Cohort::Prediabetic => 1,
        Cohort::Diabetic => 2,
    }
}

fn sex_index(s: Sex) -> usize {
    match s {
        Sex::Male => 0,
        Sex::Female => 1,
    }
}

pub fn cohort_summary(ds: &Dataset) -> CohortSummary {
    let mut summary = CohortSummary::default();
    for r in &ds.records {
        let (c, s) = (cohort_index(r.cohort), sex_index(r.sex));
        summary.counts[c][s] += 1;
        let range = &mut summary.age_ranges[c][s];
        *range = Some(match *range {
            Some((lo, hi)) => (lo.min(r.age_years), hi.max(r.age_years)),
            None => (r.age_years, r.age_years),
        });
    }
    summary
}
