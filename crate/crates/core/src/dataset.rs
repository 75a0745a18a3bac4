//! CSV + JSON sidecar storage for field-scan peak data.
//!
//! One CSV row per peak with header `index,t,bx,by,bz,band,freq_mhz`.
//! Synthetic data append `state,subsite,level_i,level_j`; measured data may
//! omit them, and may leave `t` empty or drop the column. Scan metadata lives
//! in a JSON file next to the CSV (same stem, `.json` extension).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{MagneticField, State, Subsite};
use crate::spectra::{Band, FieldScanDataset, Peak, PeakOrigin, PeakSet, ScanMetadata, ScanPoint};

pub const REQUIRED_COLUMNS: [&str; 7] = ["index", "t", "bx", "by", "bz", "band", "freq_mhz"];
pub const PROVENANCE_COLUMNS: [&str; 4] = ["state", "subsite", "level_i", "level_j"];

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_dataset(data: &FieldScanDataset, csv_path: &Path) -> Result<()> {
    let with_origin = data
        .points
        .iter()
        .flat_map(|p| p.peaks.iter())
        .any(|(_, peak)| peak.origin.is_some());
    let file = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    if with_origin {
        header.extend(PROVENANCE_COLUMNS);
    }
    w.write_record(&header)?;
    for point in &data.points {
        let b = point.peaks.field;
        for (band, peak) in point.peaks.iter() {
            let mut row = vec![
                point.index.to_string(),
                point.t.map(|t| format!("{t:.6}")).unwrap_or_default(),
                format!("{:.6}", b.bx),
                format!("{:.6}", b.by),
                format!("{:.6}", b.bz),
                band.label().to_string(),
                format!("{:.6}", peak.freq_mhz),
            ];
            if with_origin {
                match peak.origin {
                    Some(o) => row.extend([
                        o.state.name().to_string(),
                        o.subsite.number().to_string(),
                        o.lower.to_string(),
                        o.upper.to_string(),
                    ]),
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;

    let side = sidecar_path(csv_path);
    let mut f = File::create(&side).map_err(|e| Error::io(&side, e))?;
    let text = serde_json::to_string_pretty(&data.meta)?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&side, e))?;
    f.write_all(b"\n").map_err(|e| Error::io(&side, e))?;
    Ok(())
}

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Invalid(format!("line {line}: bad {what} value {field:?}")))
}

fn parse_origin(record: &csv::StringRecord, cols: &[Option<usize>; 4], line: u64) -> Result<Option<PeakOrigin>> {
    let get = |c: Option<usize>| c.and_then(|i| record.get(i)).map(str::trim).filter(|s| !s.is_empty());
    let (Some(s), Some(sub), Some(li), Some(lj)) = (get(cols[0]), get(cols[1]), get(cols[2]), get(cols[3])) else {
        return Ok(None);
    };
    let bad = || Error::Invalid(format!("line {line}: malformed provenance columns"));
    let state = State::parse(s).ok_or_else(bad)?;
    let subsite = sub.parse::<u8>().ok().and_then(Subsite::from_number).ok_or_else(bad)?;
    let lower = li.parse::<usize>().map_err(|_| bad())?;
    let upper = lj.parse::<usize>().map_err(|_| bad())?;
    Ok(Some(PeakOrigin {
        state,
        subsite,
        lower,
        upper,
    }))
}

pub fn read_dataset(csv_path: &Path) -> Result<FieldScanDataset> {
    let file = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Invalid(format!("missing column {name:?}")));
    let (ci, cbx, cby, cbz, cband, cf) = (
        need("index")?,
        need("bx")?,
        need("by")?,
        need("bz")?,
        need("band")?,
        need("freq_mhz")?,
    );
    let ct = col("t");
    let cprov = PROVENANCE_COLUMNS.map(col);

    let mut points: BTreeMap<usize, ScanPoint> = BTreeMap::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let line = row as u64 + 2;
        let field_at = |c: usize| record.get(c).unwrap_or("");
        let index: usize = field_at(ci)
            .parse()
            .map_err(|_| Error::Invalid(format!("line {line}: bad index {:?}", field_at(ci))))?;
        let t = match ct.map(field_at).filter(|s| !s.is_empty()) {
            Some(s) => Some(parse_f64(s, "t", line)?),
            None => None,
        };
        let b = MagneticField::new(
            parse_f64(field_at(cbx), "bx", line)?,
            parse_f64(field_at(cby), "by", line)?,
            parse_f64(field_at(cbz), "bz", line)?,
        );
        let band: Band = field_at(cband).parse()?;
        let freq = parse_f64(field_at(cf), "freq_mhz", line)?;
        if freq <= 0.0 {
            return Err(Error::Invalid(format!("line {line}: non-positive frequency {freq}")));
        }
        let origin = parse_origin(&record, &cprov, line)?;
        let point = points.entry(index).or_insert_with(|| ScanPoint {
            index,
            t,
            peaks: PeakSet::new(b),
        });
        if (point.peaks.field.to_vector() - b.to_vector()).amax() > 1e-9 {
            return Err(Error::Invalid(format!("line {line}: field differs from earlier rows of point {index}")));
        }
        point.peaks.push(band, Peak { freq_mhz: freq, origin });
    }
    let mut points: Vec<ScanPoint> = points.into_values().collect();
    for p in &mut points {
        p.peaks.sort();
    }

    let side = sidecar_path(csv_path);
    let meta = if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        serde_json::from_str(&text)?
    } else {
        ScanMetadata {
            n_points: points.len(),
            ..ScanMetadata::default()
        }
    };
    Ok(FieldScanDataset { meta, points })
}
