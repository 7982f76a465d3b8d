//! Model files: one JSON document per fitted model, tagged by `kind`.
//! Floating-point values are written with 17 significant digits so that a
//! save/load cycle is exact and repeated saves are byte-identical.

use std::io::{self, Write};
use std::path::Path;

use serde::ser::Serialize;
use serde::{Deserialize, Serialize as SerializeDerive};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::dnn::DnnModel;
use crate::regression::{LogisticModel, PolynomialModel, SvrModel};
use crate::{ChannelSet, Error, Result, SampleRecord};

#[derive(Clone, Debug, PartialEq, SerializeDerive, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibrationModel {
    Mpr(PolynomialModel),
    Logistic(LogisticModel),
    Svr(SvrModel),
    Dnn(DnnModel),
}

impl CalibrationModel {
    pub fn kind(&self) -> &'static str {
        match self {
            CalibrationModel::Mpr(_) => "mpr",
            CalibrationModel::Logistic(_) => "logistic",
            CalibrationModel::Svr(_) => "svr",
            CalibrationModel::Dnn(_) => "dnn",
        }
    }

    pub fn channels(&self) -> Option<ChannelSet> {
        match self {
            CalibrationModel::Mpr(m) => Some(m.channels),
            CalibrationModel::Logistic(m) => Some(m.channels),
            CalibrationModel::Svr(m) => Some(m.channels),
            CalibrationModel::Dnn(m) => m.channels,
        }
    }

    pub fn predict_volts(&self, volts: [f64; 3]) -> Result<f64> {
        match self {
            CalibrationModel::Mpr(m) => m.predict_volts(volts),
            CalibrationModel::Logistic(m) => m.predict_volts(volts),
            CalibrationModel::Svr(m) => m.predict_volts(volts),
            CalibrationModel::Dnn(m) => m.predict_volts(volts),
        }
    }

    pub fn predict_record(&self, record: &SampleRecord) -> Result<f64> {
        self.predict_volts(record.volts())
    }

    /// A short label for telemetry records, e.g. `mpr3-rm4`.
    pub fn model_id(&self) -> String {
        let ch = self.channels().map_or("none", ChannelSet::as_str);
        match self {
            CalibrationModel::Mpr(m) => format!("mpr{}-{ch}", m.degree()),
            other => format!("{}-{ch}", other.kind()),
        }
    }
}

/// Pretty printer that writes every `f64` as `{:.16e}`.
struct FixedDigits(PrettyFormatter<'static>);

macro_rules! delegate {
    ($($name:ident),* $(,)?) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
                self.0.$name(w)
            }
        )*
    };
}

impl Formatter for FixedDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    delegate!(
        begin_array,
        end_array,
        end_array_value,
        begin_object,
        end_object,
        end_object_key,
        begin_object_value,
        end_object_value,
    );
}

/// Serializes any value with 17 significant digits and two-space indent,
/// terminated by a newline.
pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedDigits(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_json_bytes(value)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_model(model: &CalibrationModel, path: impl AsRef<Path>) -> Result<()> {
    write_json(model, path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CalibrationModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: bad model file: {e}", path.display())))
}
