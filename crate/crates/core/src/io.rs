//! Binary volume formats.
//!
//! Every file is a little-endian `u32` header length, a JSON header of that
//! many bytes, then a payload of little-endian `f64` values with x varying
//! fastest. Tensor files (`DTIR`) store `(xx, xy, xz, yy, yz, zz)` per voxel,
//! velocity files (`VELF`) store `nt` time-major volumes of 3-vectors, and
//! deformation files (`DEFF`) store the endpoint followed by the nine
//! row-major Jacobian entries.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{GridSpec, TensorImage, VelocityField};
use crate::flow::FlowResult;
use crate::spd3::{Mat3, Spd3};

pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f64le";
const LAYOUT: &str = "x-fastest";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtirHeader {
    pub magic: String,
    pub version: u32,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    pub components: usize,
    pub dtype: String,
    pub layout: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelfHeader {
    pub magic: String,
    pub version: u32,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    pub tau: f64,
    pub nt: usize,
    pub components: usize,
    pub dtype: String,
    pub layout: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeffHeader {
    pub magic: String,
    pub version: u32,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    pub t_from: f64,
    pub t_to: f64,
    pub nt: usize,
    pub components: usize,
    pub dtype: String,
    pub layout: String,
}

fn encode<H: Serialize>(header: &H, payload: impl Iterator<Item = f64>) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::BadHeader("header too large".into()))?;
    let mut out = Vec::with_capacity(4 + json.len());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for x in payload {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

/// Splits a file into its header and payload values, checking the magic
/// before anything else.
fn decode<H: DeserializeOwned>(bytes: &[u8], magic: &'static str) -> Result<(H, Vec<f64>)> {
    if bytes.len() < 4 {
        return Err(Error::BadMagic {
            expected: magic,
            found: "<short file>".into(),
        });
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().expect("four bytes")) as usize;
    let end = 4usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::BadMagic {
            expected: magic,
            found: "<unreadable header>".into(),
        })?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes[4..end]).map_err(|_| Error::BadMagic {
            expected: magic,
            found: "<unreadable header>".into(),
        })?;
    match value.get("magic").and_then(|m| m.as_str()) {
        Some(m) if m == magic => {}
        other => {
            return Err(Error::BadMagic {
                expected: magic,
                found: other.unwrap_or("<missing>").to_string(),
            })
        }
    }
    let header: H = serde_json::from_value(value).map_err(|e| Error::BadHeader(e.to_string()))?;
    let payload = &bytes[end..];
    if !payload.len().is_multiple_of(8) {
        return Err(Error::TruncatedPayload {
            expected: payload.len().next_multiple_of(8),
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    Ok((header, values))
}

fn check_common(
    version: u32,
    components: usize,
    want: usize,
    dtype: &str,
    layout: &str,
) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::BadHeader(format!("unsupported version {version}")));
    }
    if components != want {
        return Err(Error::BadHeader(format!(
            "components {components}, expected {want}"
        )));
    }
    if dtype != DTYPE {
        return Err(Error::BadHeader(format!(
            "dtype {dtype:?}, expected {DTYPE:?}"
        )));
    }
    if layout != LAYOUT {
        return Err(Error::BadHeader(format!(
            "layout {layout:?}, expected {LAYOUT:?}"
        )));
    }
    Ok(())
}

fn check_len(values: &[f64], expected: usize) -> Result<()> {
    match values.len().cmp(&expected) {
        std::cmp::Ordering::Equal => Ok(()),
        std::cmp::Ordering::Less => Err(Error::TruncatedPayload {
            expected: expected * 8,
            found: values.len() * 8,
        }),
        std::cmp::Ordering::Greater => Err(Error::BadHeader(format!(
            "payload holds {} values, header implies {expected}",
            values.len()
        ))),
    }
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn encode_tensor_image(img: &TensorImage) -> Result<Vec<u8>> {
    let g = img.grid();
    let header = DtirHeader {
        magic: "DTIR".into(),
        version: FORMAT_VERSION,
        dims: g.dims,
        spacing: g.spacing,
        origin: g.origin,
        components: 6,
        dtype: DTYPE.into(),
        layout: LAYOUT.into(),
    };
    encode(&header, img.voxels().iter().flat_map(|v| v.components()))
}

pub fn decode_tensor_image(bytes: &[u8]) -> Result<TensorImage> {
    let (h, values): (DtirHeader, _) = decode(bytes, "DTIR")?;
    check_common(h.version, h.components, 6, &h.dtype, &h.layout)?;
    let grid = GridSpec::new(h.dims, h.spacing)?.with_origin(h.origin)?;
    check_len(&values, grid.n_voxels() * 6)?;
    let voxels = values
        .chunks_exact(6)
        .enumerate()
        .map(|(index, c)| {
            let c: [f64; 6] = c.try_into().expect("six components");
            Spd3::from_components(c).map_err(|e| match e {
                Error::NotPositiveDefinite { min_eigenvalue } => Error::NotSpd {
                    index,
                    min_eigenvalue,
                },
                _ => Error::NotSpd {
                    index,
                    min_eigenvalue: f64::NAN,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TensorImage::new(grid, voxels)
}

pub fn write_tensor_image(img: &TensorImage, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_tensor_image(img)?)
}

pub fn read_tensor_image(path: impl AsRef<Path>) -> Result<TensorImage> {
    decode_tensor_image(&fs::read(path)?)
}

pub fn encode_velocity(v: &VelocityField) -> Result<Vec<u8>> {
    let g = v.grid();
    let header = VelfHeader {
        magic: "VELF".into(),
        version: FORMAT_VERSION,
        dims: g.dims,
        spacing: g.spacing,
        origin: g.origin,
        tau: g.tau,
        nt: g.nt,
        components: 3,
        dtype: DTYPE.into(),
        layout: LAYOUT.into(),
    };
    encode(&header, v.samples().iter().flatten().copied())
}

pub fn decode_velocity(bytes: &[u8]) -> Result<VelocityField> {
    let (h, values): (VelfHeader, _) = decode(bytes, "VELF")?;
    check_common(h.version, h.components, 3, &h.dtype, &h.layout)?;
    let grid = GridSpec::new(h.dims, h.spacing)?
        .with_origin(h.origin)?
        .with_time(h.tau, h.nt)?;
    check_len(&values, grid.n_voxels() * grid.nt * 3)?;
    let samples = values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    VelocityField::from_samples(grid, samples)
}

pub fn write_velocity(v: &VelocityField, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_velocity(v)?)
}

pub fn read_velocity(path: impl AsRef<Path>) -> Result<VelocityField> {
    decode_velocity(&fs::read(path)?)
}

pub fn encode_deformation(fr: &FlowResult) -> Result<Vec<u8>> {
    let g = fr.grid;
    let header = DeffHeader {
        magic: "DEFF".into(),
        version: FORMAT_VERSION,
        dims: g.dims,
        spacing: g.spacing,
        origin: g.origin,
        t_from: fr.t_from,
        t_to: fr.t_to,
        nt: 1,
        components: 12,
        dtype: DTYPE.into(),
        layout: LAYOUT.into(),
    };
    let payload = fr.endpoints.iter().zip(&fr.jacobians).flat_map(|(e, j)| {
        let mut v = [0.0; 12];
        v[..3].copy_from_slice(e);
        for r in 0..3 {
            v[3 + 3 * r..6 + 3 * r].copy_from_slice(&j.0[r]);
        }
        v
    });
    encode(&header, payload)
}

/// Reads a deformation. Both determinant columns of the result hold `det J`,
/// since the divergence integral is not stored.
pub fn decode_deformation(bytes: &[u8]) -> Result<FlowResult> {
    let (h, values): (DeffHeader, _) = decode(bytes, "DEFF")?;
    check_common(h.version, h.components, 12, &h.dtype, &h.layout)?;
    if h.nt != 1 {
        return Err(Error::BadHeader(format!("nt {}, expected 1", h.nt)));
    }
    let grid = GridSpec::new(h.dims, h.spacing)?.with_origin(h.origin)?;
    check_len(&values, grid.n_voxels() * 12)?;
    if !values.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("deformation"));
    }
    let mut fr = FlowResult::identity(grid);
    fr.t_from = h.t_from;
    fr.t_to = h.t_to;
    for (i, c) in values.chunks_exact(12).enumerate() {
        fr.endpoints[i] = [c[0], c[1], c[2]];
        let j = Mat3([[c[3], c[4], c[5]], [c[6], c[7], c[8]], [c[9], c[10], c[11]]]);
        fr.det_theta[i] = j.det();
        fr.exp_div[i] = fr.det_theta[i];
        fr.jacobians[i] = j;
    }
    Ok(fr)
}

pub fn write_deformation(fr: &FlowResult, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_deformation(fr)?)
}

pub fn read_deformation(path: impl AsRef<Path>) -> Result<FlowResult> {
    decode_deformation(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let g = GridSpec::new([4; 3], [1.0; 3]).unwrap();
        let img = TensorImage::constant(g, Spd3::IDENTITY).unwrap();
        let bytes = encode_tensor_image(&img).unwrap();
        let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[4..4 + len]).unwrap();
        assert_eq!(header["magic"], "DTIR");
        assert_eq!(header["components"], 6);
        assert_eq!(bytes.len(), 4 + len + 64 * 6 * 8);
        assert_eq!(
            f64::from_le_bytes(bytes[4 + len..12 + len].try_into().unwrap()),
            1.0
        );
    }

    #[test]
    fn wrong_magic() {
        let g = GridSpec::new([4; 3], [1.0; 3]).unwrap();
        let v = VelocityField::zeros(g).unwrap();
        let bytes = encode_velocity(&v).unwrap();
        assert!(matches!(
            decode_tensor_image(&bytes),
            Err(Error::BadMagic {
                expected: "DTIR",
                ..
            })
        ));
        assert!(matches!(
            decode_velocity(b"xy"),
            Err(Error::BadMagic { .. })
        ));
    }
}
