//! Clarke error grid zone classification and plotting.
//!
//! Rules are tested in the order A, E, C, D and anything left over is B,
//! so boundary ties land in the more favourable zone.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zone {
    A,
    B,
    C,
    D,
    E,
}

impl Zone {
    pub const ALL: [Zone; 5] = [Zone::A, Zone::B, Zone::C, Zone::D, Zone::E];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Zone::A => "A",
            Zone::B => "B",
            Zone::C => "C",
            Zone::D => "D",
            Zone::E => "E",
        };
        f.write_str(s)
    }
}

pub fn classify_zone(reference: f64, predicted: f64) -> Result<Zone> {
    if !(reference > 0.0 && predicted > 0.0) {
        return Err(Error::InvalidInput(format!(
            "clarke grid needs positive values, got ref={reference} pred={predicted}"
        )));
    }
    Ok(zone_unchecked(reference, predicted))
}

fn zone_unchecked(r: f64, p: f64) -> Zone {
    if (r < 70.0 && p < 70.0) || (p - r).abs() <= 0.2 * r {
        Zone::A
    } else if (r <= 70.0 && p >= 180.0) || (r >= 180.0 && p <= 70.0) {
        Zone::E
    } else if ((70.0..=290.0).contains(&r) && p >= r + 110.0)
        || ((130.0..=180.0).contains(&r) && p <= 1.4 * r - 182.0)
    {
        Zone::C
    } else if (r >= 240.0 && (70.0..=180.0).contains(&p))
        || (r <= 175.0 / 3.0 && (70.0..=180.0).contains(&p))
        || ((175.0 / 3.0..=70.0).contains(&r) && p >= 1.2 * r)
    {
        Zone::D
    } else {
        Zone::B
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CegPoint {
    #[serde(rename = "ref")]
    pub reference: f64,
    #[serde(rename = "pred")]
    pub predicted: f64,
    pub zone: Zone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CegReport {
    pub points: Vec<CegPoint>,
    /// Counts for zones A..E.
    pub counts: [usize; 5],
    pub percent_ab: f64,
}

impl CegReport {
    pub fn count(&self, zone: Zone) -> usize {
        self.counts[zone.index()]
    }

    pub fn summary(&self) -> CegSummary {
        CegSummary {
            n: self.points.len(),
            counts: self.counts,
            percent_ab: self.percent_ab,
        }
    }

    /// Writes the per-point `ref,pred,zone` CSV.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "ref,pred,zone")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.reference, p.predicted, p.zone)?;
        }
        out.flush()
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// Zone counts without the per-point list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CegSummary {
    pub n: usize,
    pub counts: [usize; 5],
    pub percent_ab: f64,
}

pub fn ceg_report(reference: &[f64], predicted: &[f64]) -> Result<CegReport> {
    if reference.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: reference.len(),
            right: predicted.len(),
        });
    }
    let mut counts = [0usize; 5];
    let points = reference
        .iter()
        .zip(predicted)
        .map(|(&r, &p)| {
            let zone = classify_zone(r, p)?;
            counts[zone.index()] += 1;
            Ok(CegPoint {
                reference: r,
                predicted: p,
                zone,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = points.len();
    let percent_ab = if n == 0 {
        0.0
    } else {
        100.0 * (counts[0] + counts[1]) as f64 / n as f64
    };
    Ok(CegReport {
        points,
        counts,
        percent_ab,
    })
}

const SIZE: f64 = 800.0;
const MARGIN: f64 = 60.0;
const AXIS_MAX: f64 = 400.0;

fn sx(g: f64) -> f64 {
    MARGIN + g.clamp(0.0, AXIS_MAX) / AXIS_MAX * (SIZE - 2.0 * MARGIN)
}

fn sy(g: f64) -> f64 {
    SIZE - MARGIN - g.clamp(0.0, AXIS_MAX) / AXIS_MAX * (SIZE - 2.0 * MARGIN)
}

// Zone boundary segments in (ref, pred) mg/dl, derived from the rule set.
const BOUNDARIES: &[[(f64, f64); 2]] = &[
    [(0.0, 70.0), (175.0 / 3.0, 70.0)],
    [(175.0 / 3.0, 70.0), (400.0 / 1.2, 400.0)],
    [(70.0, 84.0), (70.0, 400.0)],
    [(0.0, 180.0), (70.0, 180.0)],
    [(70.0, 180.0), (290.0, 400.0)],
    [(70.0, 0.0), (70.0, 56.0)],
    [(70.0, 56.0), (400.0, 320.0)],
    [(180.0, 0.0), (180.0, 70.0)],
    [(180.0, 70.0), (400.0, 70.0)],
    [(240.0, 70.0), (240.0, 180.0)],
    [(240.0, 180.0), (400.0, 180.0)],
    [(130.0, 0.0), (180.0, 70.0)],
];

const LABELS: &[(&str, f64, f64)] = &[
    ("A", 30.0, 15.0),
    ("A", 360.0, 330.0),
    ("B", 370.0, 260.0),
    ("B", 280.0, 370.0),
    ("C", 160.0, 370.0),
    ("C", 160.0, 15.0),
    ("D", 30.0, 140.0),
    ("D", 370.0, 120.0),
    ("E", 30.0, 370.0),
    ("E", 370.0, 15.0),
];

/// Renders the report as a standalone 800x800 SVG with 0-400 mg/dl axes.
/// Points outside the axes are clamped for display only.
pub fn render_svg(report: &CegReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="800" height="800" viewBox="0 0 800 800">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="800" height="800" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m:.2}" y="{m:.2}" width="{w:.2}" height="{w:.2}" fill="none" stroke="black" stroke-width="1.5"/>"#,
        m = MARGIN,
        w = SIZE - 2.0 * MARGIN
    );
    for tick in (0..=400).step_by(50) {
        let g = f64::from(tick);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{tick}</text>"#,
            sx(g),
            SIZE - MARGIN + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{tick}</text>"#,
            MARGIN - 6.0,
            sy(g) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="400.00" y="785.00" font-size="14" text-anchor="middle">Reference glucose (mg/dl)</text>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="18.00" y="400.00" font-size="14" text-anchor="middle" transform="rotate(-90 18.00 400.00)">Predicted glucose (mg/dl)</text>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 4"/>"#,
        sx(0.0),
        sy(0.0),
        sx(AXIS_MAX),
        sy(AXIS_MAX)
    );
    let _ = writeln!(s, r#"<g id="zone-boundaries" stroke="black" stroke-width="1" fill="none">"#);
    for [(x0, y0), (x1, y1)] in BOUNDARIES {
        let _ = writeln!(
            s,
            r#"<polyline points="{:.2},{:.2} {:.2},{:.2}"/>"#,
            sx(*x0),
            sy(*y0),
            sx(*x1),
            sy(*y1)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="zone-labels" font-size="18" font-weight="bold">"#);
    for (label, x, y) in LABELS {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{label}</text>"#, sx(*x), sy(*y));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="points" fill="steelblue" fill-opacity="0.7" stroke="navy">"#);
    for p in &report.points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#,
            sx(p.reference),
            sy(p.predicted)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    s
}

pub fn ceg_svg(report: &CegReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_svg(report)).map_err(|e| Error::io(path, e))
}
