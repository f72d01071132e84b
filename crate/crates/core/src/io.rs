//! File formats: PGM density images, CSV series and state snapshots.
//!
//! Image row `r`, column `c` is lattice cell `(i = c, j = N - 1 - r)`, so the
//! top row holds the highest momentum. Every writer goes through a temporary
//! file in the destination directory followed by a rename.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::classical::{CellIndex, DensityGrid, LatticeSpec};
use crate::engine::StateVector;
use crate::experiments::{FidelitySeries, TfScanResult};
use crate::{Error, Result};

/// PGM sample encoding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PgmFormat {
    /// `P2`
    Ascii,
    /// `P5`
    #[default]
    Binary,
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Domain(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Reads a `P2` or `P5` image of exactly `N x N` pixels as a density.
pub fn read_density_pgm(path: &Path, spec: LatticeSpec) -> Result<DensityGrid> {
    parse_density_pgm(&fs::read(path)?, spec)
}

pub fn parse_density_pgm(bytes: &[u8], spec: LatticeSpec) -> Result<DensityGrid> {
    if !(bytes.starts_with(b"P2") || bytes.starts_with(b"P5")) {
        return Err(Error::Format("not a P2/P5 graymap".into()));
    }
    let img = DynamicImage::from_decoder(PnmDecoder::new(bytes)?)?;
    let n = spec.size();
    if img.width() as usize != n || img.height() as usize != n {
        return Err(Error::Format(format!(
            "image is {}x{}, lattice needs {n}x{n}",
            img.width(),
            img.height()
        )));
    }
    let pixels: Vec<f64> = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLuma16(g) => g.into_raw().into_iter().map(f64::from).collect(),
        _ => return Err(Error::Format("not a graymap".into())),
    };
    let mut weights = vec![0.0; spec.cells()];
    for (k, v) in pixels.into_iter().enumerate() {
        let (r, c) = (k / n, k % n);
        weights[spec.flat(CellIndex::new(c, n - 1 - r))] = v;
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Format("image is all zero".into()));
    }
    DensityGrid::from_weights(spec, weights)
}

/// Pixel value `round(255 rho / max rho)`.
pub fn encode_density_pgm(grid: &DensityGrid, format: PgmFormat) -> Result<Vec<u8>> {
    let spec = grid.spec();
    let n = spec.size();
    if n > u32::MAX as usize {
        return Err(Error::Domain(format!("N = {n} too large for an image")));
    }
    let max = grid.weights().iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::Domain("density has no positive weight".into()));
    }
    let mut pixels = vec![0u8; n * n];
    for (k, px) in pixels.iter_mut().enumerate() {
        let (r, c) = (k / n, k % n);
        let w = grid.weight(CellIndex::new(c, n - 1 - r));
        *px = (255.0 * w / max).round() as u8;
    }
    let encoding = match format {
        PgmFormat::Ascii => SampleEncoding::Ascii,
        PgmFormat::Binary => SampleEncoding::Binary,
    };
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(encoding))
        .write_image(&pixels, n as u32, n as u32, ExtendedColorType::L8)?;
    Ok(out)
}

pub fn write_density_pgm(grid: &DensityGrid, path: &Path, format: PgmFormat) -> Result<()> {
    write_atomic(path, &encode_density_pgm(grid, format)?)
}

/// Column names of a two-column series file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeriesHeader {
    /// `t,f`
    Fidelity,
    /// `te,fc`
    EchoFidelity,
}

impl SeriesHeader {
    pub fn columns(self) -> [&'static str; 2] {
        match self {
            SeriesHeader::Fidelity => ["t", "f"],
            SeriesHeader::EchoFidelity => ["te", "fc"],
        }
    }
}

/// 17 significant digits: enough for an exact round trip.
pub fn format_float(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.1}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..=15).contains(&exp) {
        format!("{:.*}", (16 - exp).max(1) as usize, v)
    } else {
        format!("{v:.16e}")
    }
}

fn csv_bytes<'a>(
    comments: &[String],
    header: [&str; 2],
    rows: impl Iterator<Item = [String; 2]> + 'a,
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    drop(w);
    Ok(out)
}

pub fn series_csv(series: &FidelitySeries, header: SeriesHeader) -> Result<Vec<u8>> {
    if series.is_empty() {
        return Err(Error::InsufficientData("empty series".into()));
    }
    csv_bytes(
        &[],
        header.columns(),
        series.points().iter().map(|&(t, f)| [t.to_string(), format_float(f)]),
    )
}

pub fn write_series_csv(series: &FidelitySeries, header: SeriesHeader, path: &Path) -> Result<()> {
    write_atomic(path, &series_csv(series, header)?)
}

fn read_rows(bytes: &[u8]) -> Result<(Vec<String>, Vec<[String; 2]>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.len() != 2 {
        return Err(Error::Format(format!("expected two columns, found {}", header.len())));
    }
    let rows = r
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok([rec[0].to_owned(), rec[1].to_owned()])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("not a number: {s:?}")))
}

pub fn parse_series_csv(bytes: &[u8]) -> Result<(SeriesHeader, FidelitySeries)> {
    let (header, rows) = read_rows(bytes)?;
    let kind = [SeriesHeader::Fidelity, SeriesHeader::EchoFidelity]
        .into_iter()
        .find(|k| k.columns() == [header[0].as_str(), header[1].as_str()])
        .ok_or_else(|| Error::Format(format!("unknown series header {}", header.join(","))))?;
    let points = rows
        .iter()
        .map(|[t, f]| Ok((parse_num(t)?, parse_num(f)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((kind, FidelitySeries::from_points(points)?))
}

pub fn read_series_csv(path: &Path) -> Result<(SeriesHeader, FidelitySeries)> {
    parse_series_csv(&fs::read(path)?)
}

/// `eps2nq,tf` rows for the unsaturated scan points, fit in a comment.
pub fn tf_scan_csv(result: &TfScanResult) -> Result<Vec<u8>> {
    let fit = &result.fit;
    let saturated = result.rows.iter().filter(|r| r.saturated).count();
    let comments = [
        format!(
            "fit C={}, slope={}",
            format_float(fit.prefactor),
            format_float(fit.slope)
        ),
        format!(
            "unit-slope C={}, r2={}, points={}, saturated={saturated}",
            format_float(fit.prefactor_unit_slope),
            format_float(fit.r_squared),
            fit.points
        ),
    ];
    csv_bytes(
        &comments,
        ["eps2nq", "tf"],
        result
            .rows
            .iter()
            .filter(|r| !r.saturated)
            .map(|r| [format_float(r.x()), format_float(r.t_f)]),
    )
}

pub fn write_tf_scan_csv(result: &TfScanResult, path: &Path) -> Result<()> {
    write_atomic(path, &tf_scan_csv(result)?)
}

/// `(eps^2 n_q, t_f)` pairs from a scan file.
pub fn parse_tf_scan_csv(bytes: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (header, rows) = read_rows(bytes)?;
    if header != ["eps2nq", "tf"] {
        return Err(Error::Format(format!("unknown scan header {}", header.join(","))));
    }
    rows.iter()
        .map(|[x, t]| Ok((parse_num(x)?, parse_num(t)?)))
        .collect()
}

pub fn write_snapshot(state: &StateVector, path: &Path) -> Result<()> {
    write_atomic(path, &state.to_snapshot_bytes())
}

pub fn read_snapshot(path: &Path) -> Result<StateVector> {
    StateVector::from_snapshot_bytes(&fs::read(path)?)
}
