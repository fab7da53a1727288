//! Binary artifacts (one text header line, then little-endian f64 payload)
//! and CSV exports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dtn::BoundaryOperator;
use crate::error::{Error, Result};
use crate::grid::{EnergyContext, SpatialGrid, SpectralGrid, C64};
use crate::scattering::{ScatteringData, TorusKernel, TorusKind};

/// Payload of a field file: `realonly` or interleaved `re|im` pairs.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldValues {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let head = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    Ok((head, &bytes[end + 1..]))
}

fn header_fields<'a>(head: &'a str, tag: &str, count: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = head.split_whitespace().collect();
    if parts.len() != count + 3 || parts[0] != "DBARLAB" || parts[1] != tag || parts[2] != "v1" {
        return Err(Error::Format(format!("expected a DBARLAB {tag} v1 header, got '{head}'")));
    }
    Ok(parts[3..].to_vec())
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("bad header value '{s}'")))
}

fn push_f64s(out: &mut Vec<u8>, xs: impl IntoIterator<Item = f64>) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn push_complex(out: &mut Vec<u8>, zs: &[C64]) {
    push_f64s(out, zs.iter().flat_map(|z| [z.re, z.im]));
}

fn read_f64s(payload: &[u8], count: usize) -> Result<Vec<f64>> {
    if payload.len() != 8 * count {
        return Err(Error::Format(format!("expected {count} doubles, found {} bytes", payload.len())));
    }
    let out: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Format("non-finite value in payload".into()));
    }
    Ok(out)
}

fn read_complex(payload: &[u8], count: usize) -> Result<Vec<C64>> {
    Ok(read_f64s(payload, 2 * count)?
        .chunks_exact(2)
        .map(|p| C64::new(p[0], p[1]))
        .collect())
}

pub fn write_field(path: &Path, grid: SpatialGrid, values: &FieldValues) -> Result<()> {
    let tag = match values {
        FieldValues::Real(_) => "realonly",
        FieldValues::Complex(_) => "re|im",
    };
    let mut out = format!("DBARLAB FIELD v1 {} {} {}\n", grid.n, grid.half_width, tag).into_bytes();
    match values {
        FieldValues::Real(v) => push_f64s(&mut out, v.iter().copied()),
        FieldValues::Complex(v) => push_complex(&mut out, v),
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(SpatialGrid, FieldValues)> {
    let bytes = fs::read(path)?;
    let (head, payload) = split_header(&bytes)?;
    let f = header_fields(head, "FIELD", 3)?;
    let grid = SpatialGrid::new(num(f[0])?, num(f[1])?)?;
    let values = match f[2] {
        "realonly" => FieldValues::Real(read_f64s(payload, grid.len())?),
        "re|im" => FieldValues::Complex(read_complex(payload, grid.len())?),
        other => return Err(Error::Format(format!("unknown field tag '{other}'"))),
    };
    Ok((grid, values))
}

pub fn write_field_csv(path: &Path, grid: SpatialGrid, values: &[C64]) -> Result<()> {
    let mut s = String::from("x,y,re,im\n");
    for (idx, z) in values.iter().enumerate() {
        let (x, y) = grid.point(idx);
        writeln!(s, "{x:.16e},{y:.16e},{:.16e},{:.16e}", z.re, z.im).unwrap();
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_dtn(path: &Path, op: &BoundaryOperator) -> Result<()> {
    let mut out = format!("DBARLAB DTN v1 {} {}\n", op.n_b, op.energy.e).into_bytes();
    push_complex(&mut out, &op.matrix);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_dtn(path: &Path) -> Result<BoundaryOperator> {
    let bytes = fs::read(path)?;
    let (head, payload) = split_header(&bytes)?;
    let f = header_fields(head, "DTN", 2)?;
    let n_b: usize = num(f[0])?;
    let energy = EnergyContext::new(num(f[1])?)?;
    BoundaryOperator::new(n_b, energy, read_complex(payload, n_b * n_b)?)
}

pub fn write_dtn_csv(path: &Path, op: &BoundaryOperator) -> Result<()> {
    let mut s = String::from("row,col,re,im\n");
    for i in 0..op.n_b {
        for j in 0..op.n_b {
            let z = op.get(i, j);
            writeln!(s, "{i},{j},{:.16e},{:.16e}", z.re, z.im).unwrap();
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// The header is followed by a second line `lambda_max offset_h`, which
/// fixes the annulus together with the counts in the header.
pub fn write_scattering(path: &Path, data: &ScatteringData) -> Result<()> {
    let g = &data.grid;
    let mut out = format!(
        "DBARLAB SCAT v1 {} {} {} {}\n{} {}\n",
        data.energy.e,
        g.n_radii(),
        g.n_theta(),
        g.n_circle(),
        g.lambda_max,
        g.offset_h
    )
    .into_bytes();
    push_complex(&mut out, &data.r_values);
    push_complex(&mut out, &data.rho.values);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_scattering(path: &Path) -> Result<ScatteringData> {
    let bytes = fs::read(path)?;
    let (head, rest) = split_header(&bytes)?;
    let f = header_fields(head, "SCAT", 4)?;
    let (grid_line, payload) = split_header(rest)?;
    let g: Vec<&str> = grid_line.split_whitespace().collect();
    if g.len() != 2 {
        return Err(Error::Format("expected 'lambda_max offset_h' after the header".into()));
    }
    let energy = EnergyContext::new(num(f[0])?)?;
    let (nr, nt, nc): (usize, usize, usize) = (num(f[1])?, num(f[2])?, num(f[3])?);
    let grid = SpectralGrid::new(num(g[0])?, nr, nt, nc, num(g[1])?)?;
    let n_nodes = grid.n_nodes();
    if payload.len() != 16 * (n_nodes + nc * nc) {
        return Err(Error::Format("scattering payload does not match the header".into()));
    }
    let r_values = read_complex(&payload[..16 * n_nodes], n_nodes)?;
    let rho = TorusKernel {
        n: nc,
        kind: TorusKind::Rho,
        values: read_complex(&payload[16 * n_nodes..], nc * nc)?,
    };
    ScatteringData::from_r(energy, grid, r_values, rho)
}

/// Writes `<prefix>.r.csv` and `<prefix>.rho.csv`.
pub fn write_scattering_csv(prefix: &Path, data: &ScatteringData) -> Result<()> {
    let mut s = String::from("abs_lambda,arg_lambda,re_r,im_r\n");
    for (idx, r) in data.r_values.iter().enumerate() {
        let l = data.grid.node(idx);
        writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e}", l.norm(), l.arg(), r.re, r.im).unwrap();
    }
    fs::write(with_suffix(prefix, "r.csv"), s)?;
    let n = data.rho.n;
    let mut s = String::from("arg_lambda,arg_lambda_prime,re_rho,im_rho\n");
    for a in 0..n {
        for b in 0..n {
            let z = data.rho.get(a, b);
            let (ta, tb) = (data.rho.node(a).arg(), data.rho.node(b).arg());
            writeln!(s, "{ta:.16e},{tb:.16e},{:.16e},{:.16e}", z.re, z.im).unwrap();
        }
    }
    fs::write(with_suffix(prefix, "rho.csv"), s)?;
    Ok(())
}

/// `key = value` lines in the given order.
pub fn write_metadata(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let s: String = entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    fs::write(path, s)?;
    Ok(())
}

/// `prefix` with `.suffix` appended to its file name.
pub fn with_suffix(prefix: &Path, suffix: &str) -> std::path::PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    prefix.with_file_name(name)
}
