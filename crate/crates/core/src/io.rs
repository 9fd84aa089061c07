//! Image and field file I/O.
//!
//! Field files start with a 20-byte header followed by planar little-endian
//! `f32` samples:
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 8    | magic `EOFMFLD1`                          |
//! | 8      | 4    | width, `u32` LE                           |
//! | 12     | 4    | height, `u32` LE                          |
//! | 16     | 4    | components, `u32` LE (1 scalar, 2 vector) |
//! | 20     | …    | `width·height` samples per component      |
//!
//! Vector fields store all of `u1` first, then all of `u2`. Every writer goes
//! through a temporary file in the destination directory that is renamed on
//! success, so a failed write leaves nothing behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::field::{GridGeometry, ScalarField, VectorField};

pub const FIELD_MAGIC: &[u8; 8] = b"EOFMFLD1";
pub const FIELD_HEADER_LEN: usize = 20;

/// Viridis-like color stops used by [`save_colormap_png`], evenly spaced on
/// `[0, 1]` and interpolated linearly in RGB.
pub const COLORMAP_STOPS: [[u8; 3]; 5] = [
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
];

/// Bit depth for [`save_image`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

fn write_atomically(path: &Path, write: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty path")));
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    write(tmp.as_file_mut())?;
    tmp.as_file_mut().flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Load an 8- or 16-bit grayscale PNG or binary PGM, scaled to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ScalarField> {
    let path = path.as_ref();
    let unsupported = |reason: String| Error::UnsupportedImage {
        path: path.to_path_buf(),
        reason,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Pnm) => {}
        other => return Err(unsupported(format!("format {other:?} is not PNG or PGM"))),
    }
    let decoded = reader.decode().map_err(|e| unsupported(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(unsupported("zero-sized image".into()));
    }
    let values: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(img) => img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(img) => img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => return Err(unsupported(format!("{:?} is not grayscale", other.color()))),
    };
    let geometry = GridGeometry::new(w, h).map_err(|e| unsupported(e.to_string()))?;
    ScalarField::new(geometry, values)
}

/// Save an image, quantizing `[0, 1]` to the given depth. The container is
/// chosen from the extension (`.png`, or `.pgm`).
pub fn save_image(path: impl AsRef<Path>, image: &ScalarField, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => image::ImageFormat::Png,
        Some("pgm") => image::ImageFormat::Pnm,
        _ => {
            return Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                reason: "extension must be .png or .pgm".into(),
            })
        }
    };
    let g = image.geometry();
    let (w, h) = (g.width() as u32, g.height() as u32);
    let dynamic = match depth {
        BitDepth::Eight => {
            let raw = image.values().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
            DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("sized"))
        }
        BitDepth::Sixteen => {
            let raw = image.values().iter().map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
            DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("sized"))
        }
    };
    encode(path, &dynamic, format)
}

fn encode(path: &Path, image: &DynamicImage, format: image::ImageFormat) -> Result<()> {
    write_atomically(path, |file| {
        let mut buf = std::io::Cursor::new(Vec::new());
        image.write_to(&mut buf, format).map_err(|e| Error::UnsupportedImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        file.write_all(buf.get_ref()).map_err(|e| Error::io(path, e))
    })
}

/// A field loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldData {
    Scalar(ScalarField),
    Vector(VectorField),
}

impl FieldData {
    pub fn into_vector(self) -> Option<VectorField> {
        match self {
            FieldData::Vector(v) => Some(v),
            FieldData::Scalar(_) => None,
        }
    }

    pub fn into_scalar(self) -> Option<ScalarField> {
        match self {
            FieldData::Scalar(s) => Some(s),
            FieldData::Vector(_) => None,
        }
    }
}

/// Borrowed field to be written by [`save_field`].
#[derive(Clone, Copy, Debug)]
pub enum FieldRef<'a> {
    Scalar(&'a ScalarField),
    Vector(&'a VectorField),
}

impl<'a> From<&'a ScalarField> for FieldRef<'a> {
    fn from(f: &'a ScalarField) -> Self {
        FieldRef::Scalar(f)
    }
}

impl<'a> From<&'a VectorField> for FieldRef<'a> {
    fn from(f: &'a VectorField) -> Self {
        FieldRef::Vector(f)
    }
}

/// Serialize a field into the binary field format.
pub fn encode_field<'a>(field: impl Into<FieldRef<'a>>) -> Vec<u8> {
    let field = field.into();
    let (geometry, planes): (&GridGeometry, Vec<&[f64]>) = match field {
        FieldRef::Scalar(f) => (f.geometry(), vec![f.values()]),
        FieldRef::Vector(f) => (f.geometry(), vec![f.u1(), f.u2()]),
    };
    let mut out = Vec::with_capacity(FIELD_HEADER_LEN + 4 * geometry.len() * planes.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&(geometry.width() as u32).to_le_bytes());
    out.extend_from_slice(&(geometry.height() as u32).to_le_bytes());
    out.extend_from_slice(&(planes.len() as u32).to_le_bytes());
    for plane in planes {
        for v in plane {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

/// Parse the binary field format; `origin` only labels errors.
pub fn decode_field(bytes: &[u8], origin: &Path) -> Result<FieldData> {
    let malformed = |reason: String| Error::MalformedField {
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < FIELD_HEADER_LEN {
        return Err(malformed(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != FIELD_MAGIC {
        return Err(malformed("bad magic".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (w, h, components) = (word(8), word(12), word(16));
    if components != 1 && components != 2 {
        return Err(malformed(format!("{components} components")));
    }
    let geometry = GridGeometry::new(w, h).map_err(|e| malformed(e.to_string()))?;
    let expected = FIELD_HEADER_LEN + 4 * geometry.len() * components;
    if bytes.len() != expected {
        return Err(malformed(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut planes = bytes[FIELD_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect::<Vec<_>>();
    if components == 1 {
        Ok(FieldData::Scalar(ScalarField::new(geometry, planes)?))
    } else {
        let u2 = planes.split_off(geometry.len());
        Ok(FieldData::Vector(VectorField::new(geometry, planes, u2)?))
    }
}

pub fn save_field<'a>(path: impl AsRef<Path>, field: impl Into<FieldRef<'a>>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_field(field);
    write_atomically(path, |file| file.write_all(&bytes).map_err(|e| Error::io(path, e)))
}

pub fn load_field(path: impl AsRef<Path>) -> Result<FieldData> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field(&bytes, path)
}

/// Load a field file that must hold a vector field.
pub fn load_vector_field(path: impl AsRef<Path>) -> Result<VectorField> {
    let path = path.as_ref();
    load_field(path)?.into_vector().ok_or_else(|| Error::MalformedField {
        path: path.to_path_buf(),
        reason: "expected a vector field".into(),
    })
}

/// Color of `t ∈ [0, 1]` in the fixed colormap.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (COLORMAP_STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(COLORMAP_STOPS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (COLORMAP_STOPS[i], COLORMAP_STOPS[i + 1]);
    [0, 1, 2].map(|c| (a[c] as f64 * (1.0 - f) + b[c] as f64 * f).round() as u8)
}

/// Render a scalar field as an 8-bit RGB PNG, mapping `range` linearly onto
/// the colormap and clamping values outside it.
pub fn save_colormap_png(path: impl AsRef<Path>, field: &ScalarField, range: (f64, f64)) -> Result<()> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidParameter(format!("degenerate color range [{lo}, {hi}]")));
    }
    let g = field.geometry();
    let mut raw = Vec::with_capacity(3 * g.len());
    for v in field.values() {
        raw.extend_from_slice(&colormap((v - lo) / (hi - lo)));
    }
    let img = ImageBuffer::<Rgb<u8>, _>::from_raw(g.width() as u32, g.height() as u32, raw).expect("sized");
    encode(path.as_ref(), &DynamicImage::ImageRgb8(img), image::ImageFormat::Png)
}
