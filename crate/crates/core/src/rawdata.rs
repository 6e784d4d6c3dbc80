//! Neutral on-the-wire formats for raw k-space input and reconstructed images.
//!
//! K-space container (`KSP1`):
//!
//! ```text
//! "KSP1" | u32 LE header length | header | payload
//! header  = UTF-8 "key=value\n" lines, terminated by an empty line
//! payload = little-endian f32 pairs (re, im), slice -> coil -> phase -> readout
//! ```
//!
//! Image bundle (`IMB1`):
//!
//! ```text
//! "IMB1" | u32 LE metadata length | JSON metadata | u16 LE rasters, slice-major
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use rustfft::num_complex::Complex32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KSPACE_MAGIC: &[u8; 4] = b"KSP1";
pub const IMAGE_MAGIC: &[u8; 4] = b"IMB1";

const REQUIRED_DIMS: [&str; 4] = ["readout", "phase", "coils", "slices"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic, expected {0:?}")]
    BadMagic(&'static str),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("header is not valid UTF-8 key=value text: {0}")]
    MalformedHeader(String),
    #[error("missing required dimension `{0}`")]
    MissingDim(&'static str),
    #[error("dimension `{0}` must be a positive integer")]
    NonPositiveDim(&'static str),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing bytes after payload: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: usize, found: usize },
    #[error("invalid metadata entry `{0}`")]
    InvalidMeta(String),
    #[error("sample count {found} does not match dimensions ({expected})")]
    SampleCount { expected: usize, found: usize },
    #[error("raster {slice} has {found} pixels, expected {expected}")]
    RasterLength {
        slice: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown view tag `{0}`")]
    UnknownView(String),
    #[error("bad image metadata: {0}")]
    BadMetadata(String),
}

impl FormatError {
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::UnknownView(_) => "unknown_view",
            _ => "malformed_data",
        }
    }
}

/// Matrix dimensions in acquisition order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KSpaceDims {
    pub readout: usize,
    pub phase: usize,
    pub coils: usize,
    pub slices: usize,
}

impl KSpaceDims {
    pub fn sample_count(&self) -> usize {
        self.readout * self.phase * self.coils * self.slices
    }

    pub fn plane_len(&self) -> usize {
        self.readout * self.phase
    }
}

/// Multi-coil complex k-space samples, row-major slice -> coil -> phase -> readout.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceVolume {
    dims: KSpaceDims,
    samples: Vec<Complex32>,
    meta: BTreeMap<String, String>,
}

impl KSpaceVolume {
    pub fn new(dims: KSpaceDims, samples: Vec<Complex32>) -> Result<Self, FormatError> {
        for (name, v) in REQUIRED_DIMS
            .iter()
            .zip([dims.readout, dims.phase, dims.coils, dims.slices])
        {
            if v == 0 {
                return Err(FormatError::NonPositiveDim(name));
            }
        }
        if samples.len() != dims.sample_count() {
            return Err(FormatError::SampleCount {
                expected: dims.sample_count(),
                found: samples.len(),
            });
        }
        Ok(Self {
            dims,
            samples,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(
        mut self,
        key: impl Into<String>,
        value: impl Into<String>,
    ) -> Result<Self, FormatError> {
        let (key, value) = (key.into(), value.into());
        validate_meta(&key, &value)?;
        self.meta.insert(key, value);
        Ok(self)
    }

    pub fn dims(&self) -> KSpaceDims {
        self.dims
    }

    pub fn samples(&self) -> &[Complex32] {
        &self.samples
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    /// The `phase x readout` plane of one coil in one slice.
    pub fn plane(&self, slice: usize, coil: usize) -> &[Complex32] {
        let n = self.dims.plane_len();
        let start = (slice * self.dims.coils + coil) * n;
        &self.samples[start..start + n]
    }
}

fn validate_meta(key: &str, value: &str) -> Result<(), FormatError> {
    let bad_key = key.is_empty() || key.contains(['=', '\n', '\r']) || REQUIRED_DIMS.contains(&key);
    if bad_key || value.contains(['\n', '\r']) {
        return Err(FormatError::InvalidMeta(key.to_string()));
    }
    Ok(())
}

fn read_prefixed<'a>(
    bytes: &'a [u8],
    magic: &'static [u8; 4],
    name: &'static str,
) -> Result<(&'a [u8], &'a [u8]), FormatError> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(FormatError::BadMagic(name));
    }
    let rest = &bytes[4..];
    if rest.len() < 4 {
        return Err(FormatError::TruncatedHeader);
    }
    let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < len {
        return Err(FormatError::TruncatedHeader);
    }
    Ok(rest.split_at(len))
}

fn write_prefixed(out: &mut Vec<u8>, magic: &[u8; 4], record: &[u8]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&(record.len() as u32).to_le_bytes());
    out.extend_from_slice(record);
}

pub fn parse_kspace(bytes: &[u8]) -> Result<KSpaceVolume, FormatError> {
    let (header, payload) = read_prefixed(bytes, KSPACE_MAGIC, "KSP1")?;
    let text = std::str::from_utf8(header).map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
    let body = text
        .strip_suffix("\n\n")
        .ok_or_else(|| FormatError::MalformedHeader("missing blank-line terminator".into()))?;

    let mut fields = BTreeMap::new();
    for line in body.split('\n') {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FormatError::MalformedHeader(format!("no `=` in line {line:?}")))?;
        if fields.insert(k.to_string(), v.to_string()).is_some() {
            return Err(FormatError::MalformedHeader(format!("duplicate key `{k}`")));
        }
    }

    let mut dim = |name: &'static str| -> Result<usize, FormatError> {
        let raw = fields.remove(name).ok_or(FormatError::MissingDim(name))?;
        match raw.trim().parse::<i64>() {
            Ok(v) if v > 0 => Ok(v as usize),
            Ok(_) => Err(FormatError::NonPositiveDim(name)),
            Err(_) => Err(FormatError::MalformedHeader(format!(
                "`{name}` is not an integer"
            ))),
        }
    };
    let dims = KSpaceDims {
        readout: dim("readout")?,
        phase: dim("phase")?,
        coils: dim("coils")?,
        slices: dim("slices")?,
    };

    let expected = dims
        .sample_count()
        .checked_mul(8)
        .ok_or_else(|| FormatError::MalformedHeader("dimensions overflow".into()))?;
    if payload.len() < expected {
        return Err(FormatError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(FormatError::TrailingBytes {
            expected,
            found: payload.len(),
        });
    }
    let samples = payload
        .chunks_exact(8)
        .map(|c| {
            Complex32::new(
                f32::from_le_bytes(c[..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..].try_into().unwrap()),
            )
        })
        .collect();

    let mut vol = KSpaceVolume::new(dims, samples)?;
    for (k, v) in fields {
        vol = vol.with_meta(k, v)?;
    }
    Ok(vol)
}

pub fn write_kspace(vol: &KSpaceVolume) -> Vec<u8> {
    let d = vol.dims;
    let mut header = format!(
        "readout={}\nphase={}\ncoils={}\nslices={}\n",
        d.readout, d.phase, d.coils, d.slices
    );
    for (k, v) in &vol.meta {
        header.push_str(k);
        header.push('=');
        header.push_str(v);
        header.push('\n');
    }
    header.push('\n');

    let mut out = Vec::with_capacity(8 + header.len() + vol.samples.len() * 8);
    write_prefixed(&mut out, KSPACE_MAGIC, header.as_bytes());
    for s in &vol.samples {
        out.extend_from_slice(&s.re.to_le_bytes());
        out.extend_from_slice(&s.im.to_le_bytes());
    }
    out
}

/// Anatomical plane of an image series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Axial,
    Sagittal,
    Coronal,
    None,
}

impl View {
    pub const ALL: [View; 4] = [View::Axial, View::Sagittal, View::Coronal, View::None];

    pub fn as_str(self) -> &'static str {
        match self {
            View::Axial => "axial",
            View::Sagittal => "sagittal",
            View::Coronal => "coronal",
            View::None => "none",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        View::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| FormatError::UnknownView(s.to_string()))
    }
}

/// Patient identity fields. Removed wholesale by [`anonymize`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    pub patient_name: String,
    pub patient_id: String,
    pub birth_date: String,
    pub institution: String,
}

/// Intensity range of the unquantized magnitudes behind the 16-bit rasters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMeta {
    pub intensity_min: f64,
    pub intensity_max: f64,
}

impl Default for PixelMeta {
    fn default() -> Self {
        Self {
            intensity_min: 0.0,
            intensity_max: u16::MAX as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSeries {
    pub width: usize,
    pub height: usize,
    pub slices: Vec<Vec<u16>>,
    pub view: View,
    pub method_tag: String,
    pub identity: Option<Identity>,
    pub pixel_meta: PixelMeta,
}

impl ImageSeries {
    pub fn validate(&self) -> Result<(), FormatError> {
        let expected = self.width * self.height;
        for (slice, raster) in self.slices.iter().enumerate() {
            if raster.len() != expected {
                return Err(FormatError::RasterLength {
                    slice,
                    expected,
                    found: raster.len(),
                });
            }
        }
        Ok(())
    }

    /// Pixel value mapped back to the unquantized intensity range.
    pub fn intensity(&self, raw: u16) -> f64 {
        let PixelMeta {
            intensity_min: lo,
            intensity_max: hi,
        } = self.pixel_meta;
        lo + (hi - lo) * raw as f64 / u16::MAX as f64
    }

    /// Little-endian bytes of every raster, in slice order.
    pub fn pixel_bytes(&self) -> Vec<u8> {
        self.slices
            .iter()
            .flatten()
            .flat_map(|p| p.to_le_bytes())
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    width: usize,
    height: usize,
    slices: usize,
    view: String,
    method_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    identity: Option<Identity>,
    pixel_meta: PixelMeta,
}

pub fn write_image_bundle(series: &ImageSeries) -> Result<Vec<u8>, FormatError> {
    series.validate()?;
    let meta = BundleMeta {
        width: series.width,
        height: series.height,
        slices: series.slices.len(),
        view: series.view.as_str().to_string(),
        method_tag: series.method_tag.clone(),
        identity: series.identity.clone(),
        pixel_meta: series.pixel_meta,
    };
    let record = serde_json::to_vec(&meta).map_err(|e| FormatError::BadMetadata(e.to_string()))?;
    let mut out =
        Vec::with_capacity(8 + record.len() + series.width * series.height * 2 * series.slices.len());
    write_prefixed(&mut out, IMAGE_MAGIC, &record);
    out.extend_from_slice(&series.pixel_bytes());
    Ok(out)
}

pub fn read_image_bundle(bytes: &[u8]) -> Result<ImageSeries, FormatError> {
    let (record, payload) = read_prefixed(bytes, IMAGE_MAGIC, "IMB1")?;
    let meta: BundleMeta =
        serde_json::from_slice(record).map_err(|e| FormatError::BadMetadata(e.to_string()))?;
    let view: View = meta.view.parse()?;
    let per_slice = meta.width * meta.height;
    let expected = per_slice * meta.slices * 2;
    if payload.len() != expected {
        let found_pixels = payload.len() / 2;
        let slice = found_pixels.checked_div(per_slice).unwrap_or(0);
        return Err(FormatError::RasterLength {
            slice: slice.min(meta.slices.saturating_sub(1)),
            expected: per_slice,
            found: found_pixels.saturating_sub(slice * per_slice),
        });
    }
    let pixels: Vec<u16> = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    let slices = if per_slice == 0 {
        vec![Vec::new(); meta.slices]
    } else {
        pixels.chunks(per_slice).map(<[u16]>::to_vec).collect()
    };
    Ok(ImageSeries {
        width: meta.width,
        height: meta.height,
        slices,
        view,
        method_tag: meta.method_tag,
        identity: meta.identity,
        pixel_meta: meta.pixel_meta,
    })
}

/// Drops the patient identity block; pixels and other metadata are untouched.
pub fn anonymize(series: &ImageSeries) -> ImageSeries {
    ImageSeries {
        identity: None,
        ..series.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transfer::md5_hex;
    use proptest::prelude::*;

    fn one_sample() -> KSpaceVolume {
        let dims = KSpaceDims {
            readout: 1,
            phase: 1,
            coils: 1,
            slices: 1,
        };
        KSpaceVolume::new(dims, vec![Complex32::new(1.0, 0.0)]).unwrap()
    }

    fn header_only(text: &str) -> Vec<u8> {
        let mut out = Vec::new();
        write_prefixed(&mut out, KSPACE_MAGIC, text.as_bytes());
        out
    }

    #[test]
    fn minimal_volume_round_trips() {
        let bytes = write_kspace(&one_sample());
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - 8 - header_len, 8);
        assert_eq!(&bytes[bytes.len() - 8..], &[0, 0, 0x80, 0x3f, 0, 0, 0, 0]);
        assert_eq!(parse_kspace(&bytes).unwrap(), one_sample());
    }

    #[test]
    fn short_payload_is_truncated() {
        let mut bytes = header_only("readout=320\nphase=320\ncoils=6\nslices=16\n\n");
        let n = 320 * 320 * 6 * 16 * 8;
        bytes.resize(bytes.len() + n - 4, 0);
        let err = parse_kspace(&bytes).unwrap_err();
        assert_eq!(
            err,
            FormatError::TruncatedPayload {
                expected: n,
                found: n - 4
            }
        );
        assert!(err.to_string().starts_with("truncated payload"));
    }

    #[test]
    fn header_errors() {
        assert_eq!(
            parse_kspace(&header_only("readout=1\nphase=1\ncoils=1\n\n")).unwrap_err(),
            FormatError::MissingDim("slices")
        );
        assert_eq!(
            parse_kspace(&header_only("readout=1\nphase=0\ncoils=1\nslices=1\n\n")).unwrap_err(),
            FormatError::NonPositiveDim("phase")
        );
        assert_eq!(
            parse_kspace(&header_only("readout=-3\nphase=1\ncoils=1\nslices=1\n\n")).unwrap_err(),
            FormatError::NonPositiveDim("readout")
        );
        assert!(matches!(
            parse_kspace(&header_only("readout=1\nphase=1\ncoils=1\nslices=1\n")),
            Err(FormatError::MalformedHeader(_))
        ));
        assert_eq!(
            parse_kspace(b"KSP0\0\0\0\0").unwrap_err(),
            FormatError::BadMagic("KSP1")
        );
    }

    #[test]
    fn meta_is_kept_and_sorted() {
        let vol = one_sample()
            .with_meta("view", "axial")
            .unwrap()
            .with_meta("protocol", "t2")
            .unwrap();
        let bytes = write_kspace(&vol);
        let text = String::from_utf8_lossy(&bytes[8..]);
        assert!(text.starts_with("readout=1\nphase=1\ncoils=1\nslices=1\nprotocol=t2\nview=axial\n\n"));
        assert_eq!(parse_kspace(&bytes).unwrap(), vol);
        assert!(one_sample().with_meta("a=b", "x").is_err());
        assert!(one_sample().with_meta("phase", "2").is_err());
    }

    fn series_2x2() -> ImageSeries {
        ImageSeries {
            width: 2,
            height: 2,
            slices: vec![vec![0, 1, 2, 3]],
            view: View::Sagittal,
            method_tag: "zero_fill".into(),
            identity: Some(Identity {
                patient_name: "A".into(),
                patient_id: "1".into(),
                birth_date: "1970-01-01".into(),
                institution: "General".into(),
            }),
            pixel_meta: PixelMeta::default(),
        }
    }

    #[test]
    fn bundle_round_trip_keeps_view() {
        let s = series_2x2();
        let bytes = write_image_bundle(&s).unwrap();
        let back = read_image_bundle(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.view, View::Sagittal);
        assert_eq!(&bytes[bytes.len() - 8..], &[0, 0, 1, 0, 2, 0, 3, 0]);
    }

    #[test]
    fn bundle_errors() {
        let mut s = series_2x2();
        s.slices[0].pop();
        assert!(matches!(
            write_image_bundle(&s),
            Err(FormatError::RasterLength {
                slice: 0,
                expected: 4,
                found: 3
            })
        ));

        let good = write_image_bundle(&series_2x2()).unwrap();
        assert!(matches!(
            read_image_bundle(&good[..good.len() - 2]),
            Err(FormatError::RasterLength { .. })
        ));

        let text = String::from_utf8(good[8..good.len() - 8].to_vec()).unwrap();
        let edited = text.replace("\"sagittal\"", "\"oblique\"");
        let mut bad = Vec::new();
        write_prefixed(&mut bad, IMAGE_MAGIC, edited.as_bytes());
        bad.extend_from_slice(&good[good.len() - 8..]);
        assert_eq!(
            read_image_bundle(&bad).unwrap_err(),
            FormatError::UnknownView("oblique".into())
        );
    }

    #[test]
    fn anonymize_drops_identity_only() {
        let s = series_2x2();
        let anon = anonymize(&s);
        assert!(anon.identity.is_none());
        assert_eq!(anon.pixel_bytes(), s.pixel_bytes());
        assert_eq!(anon.method_tag, s.method_tag);
        assert_eq!(anon.pixel_meta, s.pixel_meta);
        assert_eq!(anonymize(&anon), anon);
    }

    #[test]
    fn anonymize_after_transport_preserves_pixel_hash() {
        let s = series_2x2();
        let back = read_image_bundle(&write_image_bundle(&s).unwrap()).unwrap();
        assert_eq!(
            md5_hex(&anonymize(&back).pixel_bytes()),
            md5_hex(&s.pixel_bytes())
        );
    }

    fn arb_volume() -> impl Strategy<Value = KSpaceVolume> {
        (1usize..5, 1usize..5, 1usize..3, 1usize..3)
            .prop_flat_map(|(r, p, c, s)| {
                let n = r * p * c * s;
                (
                    Just(KSpaceDims {
                        readout: r,
                        phase: p,
                        coils: c,
                        slices: s,
                    }),
                    prop::collection::vec((any::<f32>(), any::<f32>()), n),
                    prop::collection::btree_map("[a-z_]{1,8}", "[ -~]{0,12}", 0..3),
                )
            })
            .prop_filter_map("reserved meta key", |(dims, raw, meta)| {
                let samples = raw.into_iter().map(|(a, b)| Complex32::new(a, b)).collect();
                let mut vol = KSpaceVolume::new(dims, samples).ok()?;
                for (k, v) in meta {
                    vol = vol.with_meta(k, v).ok()?;
                }
                Some(vol)
            })
    }

    fn arb_series() -> impl Strategy<Value = ImageSeries> {
        (1usize..6, 1usize..6, 0usize..4, 0usize..4, any::<bool>())
            .prop_flat_map(|(w, h, n, view, with_id)| {
                (
                    prop::collection::vec(prop::collection::vec(any::<u16>(), w * h), n),
                    "[ -~]{0,16}",
                    -1e3f64..1e3,
                    0f64..1e3,
                    Just((w, h, View::ALL[view], with_id)),
                )
            })
            .prop_map(|(slices, tag, lo, span, (w, h, view, with_id))| ImageSeries {
                width: w,
                height: h,
                slices,
                view,
                method_tag: tag.clone(),
                identity: with_id.then(|| Identity {
                    patient_name: tag.clone(),
                    patient_id: "42".into(),
                    birth_date: "2000-02-29".into(),
                    institution: "X".into(),
                }),
                pixel_meta: PixelMeta {
                    intensity_min: lo,
                    intensity_max: lo + span,
                },
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn kspace_bytes_round_trip(vol in arb_volume()) {
            let bytes = write_kspace(&vol);
            let back = parse_kspace(&bytes).unwrap();
            // NaN payloads compare unequal as floats; compare the serialized form.
            prop_assert_eq!(write_kspace(&back), bytes.clone());
            prop_assert_eq!(md5_hex(&write_kspace(&vol.clone())), md5_hex(&bytes));
        }

        #[test]
        fn bundle_round_trip(s in arb_series()) {
            let back = read_image_bundle(&write_image_bundle(&s).unwrap()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
