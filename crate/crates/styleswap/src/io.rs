//! Bit-exact interchange: image codecs (binary PPM and PNG), the weight-file
//! model format, dataset folder ingestion, and CSV report writing.
//!
//! # Weight file layout (normative, all integers little-endian)
//!
//! ```text
//! magic      4 bytes  "SSWP"
//! version    u32      currently 1
//! name_len   u32      followed by that many UTF-8 bytes
//! mean       3 x f32  input preprocessing mean (RGB)
//! scale      3 x f32  input preprocessing scale (RGB)
//! layers     u32      record count
//! per record:
//!   kind     u8       0 conv, 1 transposed conv, 2 max pool, 3 relu,
//!                     4 instance norm, 5 nearest-neighbor upsample
//!   filter, stride, padding, in_ch, out_ch   5 x u32
//!                     pool/upsample store their factor in `filter` and
//!                     `stride`, zeros elsewhere; relu/instance norm are
//!                     all zeros
//!   weights_len u64   byte length, then raw f32 data
//!   bias_len    u64   byte length, then raw f32 data
//! ```
//!
//! Payload lengths must equal the shape implied by the spec integers
//! (`4*f*f*in*out` and `4*out` for convolutions, zero otherwise), and
//! trailing bytes after the last record are rejected. Values are stored as
//! f32 on disk regardless of the in-memory precision.
//!
//! Inverse-network checkpoints reuse the `name` field to record their
//! pairing as `<net>@<encoder>`; plain encoders must not contain `@`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::encoder::{EncoderSpec, Preprocess};
use crate::error::{Error, Result};
use crate::invnet::InverseNetSpec;
use crate::nn::{ConvSpec, Layer, LayerParams, LayerSpec};
use crate::optim::OptimReport;
use crate::tensor::{Scalar, Tensor};

pub const WEIGHT_MAGIC: [u8; 4] = *b"SSWP";
pub const WEIGHT_VERSION: u32 = 1;

/// Header metadata of a weight file.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightFileMeta {
    pub name: String,
    pub mean: [f32; 3],
    pub scale: [f32; 3],
}

impl WeightFileMeta {
    pub fn plain(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            mean: [0.0; 3],
            scale: [1.0; 3],
        }
    }
}

// ---------------------------------------------------------------------------
// images
// ---------------------------------------------------------------------------

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn decode_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Loads an 8-bit RGB image (`.ppm` P6 or `.png`) into an `h x w x 3`
/// tensor in `[0, 1]`.
pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    match extension(path) {
        Some("ppm") => {
            let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
            ppm_from_bytes(&bytes).map_err(|reason| decode_err(path, reason))
        }
        Some("png") => {
            let img = image::open(path)
                .map_err(|e| decode_err(path, e.to_string()))?
                .to_rgb8();
            let (w, h) = img.dimensions();
            let data = img
                .into_raw()
                .into_iter()
                .map(|v| T::from_f64(v as f64 / 255.0))
                .collect();
            Tensor::from_vec(&[h as usize, w as usize, 3], data)
        }
        _ => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
        }),
    }
}

/// Writes an `h x w x 3` tensor as an 8-bit image, clamping to `[0, 1]` and
/// rounding to the nearest of 255 levels. Format follows the extension.
pub fn save_image<T: Scalar>(path: &Path, image: &Tensor<T>) -> Result<()> {
    let (h, w, d) = image.dims3();
    if d != 3 {
        return Err(Error::ShapeMismatch {
            expected: vec![h, w, 3],
            got: image.shape().to_vec(),
        });
    }
    let quantized: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    match extension(path) {
        Some("ppm") => {
            let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(&quantized);
            fs::write(path, out).map_err(|e| io_err(path, e))
        }
        Some("png") => {
            let img = image::RgbImage::from_raw(w as u32, h as u32, quantized)
                .expect("buffer length matches dimensions");
            img.save(path).map_err(|e| decode_err(path, e.to_string()))
        }
        _ => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
        }),
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

fn ppm_from_bytes<T: Scalar>(bytes: &[u8]) -> std::result::Result<Tensor<T>, String> {
    let mut pos = 0usize;
    let mut token = || -> std::result::Result<Vec<u8>, String> {
        // skip whitespace and '#' comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        Ok(bytes[start..pos].to_vec())
    };

    if token()? != b"P6" {
        return Err("not a binary P6 file".into());
    }
    let mut dims = [0usize; 3];
    for (slot, what) in dims.iter_mut().zip(["width", "height", "maxval"]) {
        *slot = String::from_utf8(token()?)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| format!("bad {what}"))?;
    }
    let [w, h, maxval] = dims;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval} (only 8-bit)"));
    }
    // a single whitespace byte separates the header from the raster data
    if !pos_is_whitespace(bytes, pos) {
        return Err("missing raster separator".into());
    }
    pos += 1;
    let need = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(3))
        .ok_or("dimensions overflow")?;
    if bytes.len() < pos + need {
        return Err(format!("truncated raster: need {need} bytes"));
    }
    let data = bytes[pos..pos + need]
        .iter()
        .map(|&v| T::from_f64(v as f64 / 255.0))
        .collect();
    Tensor::from_vec(&[h, w, 3], data).map_err(|e| e.to_string())
}

fn pos_is_whitespace(bytes: &[u8], pos: usize) -> bool {
    bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace())
}

/// Bilinear resize with pixel-center alignment: destination cell `y` samples
/// the source at `(y + 0.5) * src/dst - 0.5`, clamped to the valid range.
/// Identity when the target equals the source size.
pub fn resize_bilinear<T: Scalar>(
    image: &Tensor<T>,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor<T>> {
    let (h, w, d) = image.dims3();
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidShape {
            shape: vec![target_h, target_w, d],
        });
    }
    if target_h == h && target_w == w {
        return Ok(image.clone());
    }
    let mut out = vec![T::zero(); target_h * target_w * d];
    let sy = h as f64 / target_h as f64;
    let sx = w as f64 / target_w as f64;
    for y in 0..target_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = T::from_f64(fy - y0 as f64);
        for x in 0..target_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = T::from_f64(fx - x0 as f64);
            for c in 0..d {
                let one = T::one();
                let v00 = image.at3(y0, x0, c);
                let v01 = image.at3(y0, x1, c);
                let v10 = image.at3(y1, x0, c);
                let v11 = image.at3(y1, x1, c);
                let top = v00 * (one - tx) + v01 * tx;
                let bottom = v10 * (one - tx) + v11 * tx;
                out[(y * target_w + x) * d + c] = top * (one - ty) + bottom * ty;
            }
        }
    }
    Tensor::from_vec(&[target_h, target_w, d], out)
}

// ---------------------------------------------------------------------------
// weight files
// ---------------------------------------------------------------------------

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| Error::WeightFormat {
            reason: format!("{what}: length overflows"),
        })?;
        if end > self.buf.len() {
            return Err(Error::WeightFormat {
                reason: format!(
                    "{what}: needs {n} bytes at offset {} but only {} remain",
                    self.pos,
                    self.buf.len() - self.pos
                ),
            });
        }
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn push_f32s<T: Scalar>(out: &mut Vec<u8>, values: &[T]) {
    for v in values {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

fn layer_ints(spec: &LayerSpec) -> (u8, [u32; 5]) {
    match spec {
        LayerSpec::Conv(c) => (
            0,
            [
                c.filter as u32,
                c.stride as u32,
                c.padding as u32,
                c.in_channels as u32,
                c.out_channels as u32,
            ],
        ),
        LayerSpec::TransposedConv(c) => (
            1,
            [
                c.filter as u32,
                c.stride as u32,
                c.padding as u32,
                c.in_channels as u32,
                c.out_channels as u32,
            ],
        ),
        LayerSpec::MaxPool { factor } => (2, [*factor as u32, *factor as u32, 0, 0, 0]),
        LayerSpec::ReLU => (3, [0; 5]),
        LayerSpec::InstanceNorm => (4, [0; 5]),
        LayerSpec::NnUpsample { factor } => (5, [*factor as u32, *factor as u32, 0, 0, 0]),
    }
}

/// Serializes metadata plus layers into the normative byte layout.
pub fn weights_to_bytes<T: Scalar>(meta: &WeightFileMeta, layers: &[Layer<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.name.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.name.as_bytes());
    for v in meta.mean.iter().chain(&meta.scale) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for layer in layers {
        let (kind, ints) = layer_ints(&layer.spec);
        out.push(kind);
        for v in ints {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &layer.params {
            Some(p) => {
                out.extend_from_slice(&(4 * p.weights.len() as u64).to_le_bytes());
                push_f32s(&mut out, p.weights.data());
                out.extend_from_slice(&(4 * p.bias.len() as u64).to_le_bytes());
                push_f32s(&mut out, p.bias.data());
            }
            None => {
                out.extend_from_slice(&0u64.to_le_bytes());
                out.extend_from_slice(&0u64.to_le_bytes());
            }
        }
    }
    out
}

fn parse_payload<T: Scalar>(
    r: &mut ByteReader<'_>,
    expected_elems: u64,
    layer_idx: usize,
    what: &str,
) -> Result<Vec<T>> {
    let declared = r.u64(&format!("layer {layer_idx} {what} length"))?;
    let expected_bytes = expected_elems
        .checked_mul(4)
        .ok_or_else(|| Error::WeightFormat {
            reason: format!("layer {layer_idx}: {what} shape overflows"),
        })?;
    if declared != expected_bytes {
        return Err(Error::WeightFormat {
            reason: format!(
                "layer {layer_idx}: {what} payload is {declared} bytes, shape requires {expected_bytes}"
            ),
        });
    }
    let raw = r.take(declared as usize, &format!("layer {layer_idx} {what} data"))?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect())
}

/// Parses the normative byte layout. Never panics on malformed input; every
/// failure is a structured error naming the offending field.
pub fn weights_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(WeightFileMeta, Vec<Layer<T>>)> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != WEIGHT_MAGIC {
        return Err(Error::WeightFormat {
            reason: "bad magic (expected SSWP)".into(),
        });
    }
    let version = r.u32("version")?;
    if version != WEIGHT_VERSION {
        return Err(Error::UnsupportedVersion {
            got: version,
            supported: WEIGHT_VERSION,
        });
    }
    let name_len = r.u32("name length")? as usize;
    let name = String::from_utf8(r.take(name_len, "name")?.to_vec()).map_err(|_| {
        Error::WeightFormat {
            reason: "name is not valid UTF-8".into(),
        }
    })?;
    let mut mean = [0.0f32; 3];
    let mut scale = [0.0f32; 3];
    for m in &mut mean {
        *m = r.f32("mean")?;
    }
    for s in &mut scale {
        *s = r.f32("scale")?;
    }
    let count = r.u32("layer count")?;
    let mut layers = Vec::new();
    for idx in 0..count {
        let idx = idx as usize;
        let kind = r.u8(&format!("layer {idx} kind"))?;
        let mut ints = [0u32; 5];
        for (field, v) in ["filter", "stride", "padding", "in_ch", "out_ch"]
            .iter()
            .zip(&mut ints)
        {
            *v = r.u32(&format!("layer {idx} {field}"))?;
        }
        let [filter, stride, padding, in_ch, out_ch] = ints.map(|v| v as u64);
        let layer = match kind {
            0 | 1 => {
                if filter == 0 || stride == 0 || in_ch == 0 || out_ch == 0 {
                    return Err(Error::WeightFormat {
                        reason: format!("layer {idx}: convolution fields must be nonzero"),
                    });
                }
                let w_elems = filter
                    .checked_mul(filter)
                    .and_then(|v| v.checked_mul(in_ch))
                    .and_then(|v| v.checked_mul(out_ch))
                    .ok_or_else(|| Error::WeightFormat {
                        reason: format!("layer {idx}: weight shape overflows"),
                    })?;
                let weights = parse_payload::<T>(&mut r, w_elems, idx, "weights")?;
                let bias = parse_payload::<T>(&mut r, out_ch, idx, "bias")?;
                let spec = ConvSpec {
                    filter: filter as usize,
                    stride: stride as usize,
                    padding: padding as usize,
                    in_channels: in_ch as usize,
                    out_channels: out_ch as usize,
                };
                let params = LayerParams {
                    weights: Tensor::from_vec(
                        &[spec.filter, spec.filter, spec.in_channels, spec.out_channels],
                        weights,
                    )?,
                    bias: Tensor::from_vec(&[spec.out_channels], bias)?,
                };
                if kind == 0 {
                    Layer::conv(spec, params)
                } else {
                    Layer::transposed_conv(spec, params)
                }
            }
            2 | 5 => {
                if filter == 0 || filter != stride || padding != 0 || in_ch != 0 || out_ch != 0 {
                    return Err(Error::WeightFormat {
                        reason: format!("layer {idx}: malformed pool/upsample fields"),
                    });
                }
                if kind == 2 && filter < 2 {
                    return Err(Error::WeightFormat {
                        reason: format!("layer {idx}: pooling factor must be at least 2"),
                    });
                }
                parse_payload::<T>(&mut r, 0, idx, "weights")?;
                parse_payload::<T>(&mut r, 0, idx, "bias")?;
                if kind == 2 {
                    Layer::max_pool(filter as usize)
                } else {
                    Layer::nn_upsample(filter as usize)
                }
            }
            3 | 4 => {
                if ints != [0; 5] {
                    return Err(Error::WeightFormat {
                        reason: format!("layer {idx}: parameter-free layer has nonzero fields"),
                    });
                }
                parse_payload::<T>(&mut r, 0, idx, "weights")?;
                parse_payload::<T>(&mut r, 0, idx, "bias")?;
                if kind == 3 {
                    Layer::relu()
                } else {
                    Layer::instance_norm()
                }
            }
            other => {
                return Err(Error::WeightFormat {
                    reason: format!("layer {idx}: unknown kind tag {other}"),
                });
            }
        };
        layers.push(layer);
    }
    if r.remaining() != 0 {
        return Err(Error::WeightFormat {
            reason: format!("{} trailing bytes after the last record", r.remaining()),
        });
    }
    Ok((WeightFileMeta { name, mean, scale }, layers))
}

pub fn save_weights<T: Scalar>(
    path: &Path,
    meta: &WeightFileMeta,
    layers: &[Layer<T>],
) -> Result<()> {
    fs::write(path, weights_to_bytes(meta, layers)).map_err(|e| io_err(path, e))
}

pub fn load_weights<T: Scalar>(path: &Path) -> Result<(WeightFileMeta, Vec<Layer<T>>)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    weights_from_bytes(&bytes)
}

/// Saves an encoder (name, preprocessing, layers) as a weight file.
pub fn save_encoder<T: Scalar>(path: &Path, enc: &EncoderSpec<T>) -> Result<()> {
    let meta = WeightFileMeta {
        name: enc.name().to_string(),
        mean: enc.preprocess().mean,
        scale: enc.preprocess().scale,
    };
    save_weights(path, &meta, enc.layers())
}

pub fn load_encoder<T: Scalar>(path: &Path) -> Result<EncoderSpec<T>> {
    let (meta, layers) = load_weights(path)?;
    if meta.name.contains('@') {
        return Err(Error::WeightFormat {
            reason: format!("'{}' is an inverse-net checkpoint, not an encoder", meta.name),
        });
    }
    Ok(EncoderSpec::new(
        meta.name,
        layers,
        Preprocess {
            mean: meta.mean,
            scale: meta.scale,
        },
    ))
}

/// Saves an inverse network; the pairing is recorded in the name field as
/// `<net>@<encoder>`.
pub fn save_inverse_net<T: Scalar>(path: &Path, net: &InverseNetSpec<T>) -> Result<()> {
    let meta = WeightFileMeta::plain(format!("{}@{}", net.name(), net.encoder_name()));
    save_weights(path, &meta, net.layers())
}

pub fn load_inverse_net<T: Scalar>(path: &Path) -> Result<InverseNetSpec<T>> {
    let (meta, layers) = load_weights(path)?;
    let (name, encoder_name) =
        meta.name
            .split_once('@')
            .ok_or_else(|| Error::WeightFormat {
                reason: format!("'{}' is not an inverse-net checkpoint (no pairing)", meta.name),
            })?;
    Ok(InverseNetSpec::new(name, encoder_name, layers))
}

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

/// A scanned image folder: decodable files in a platform-independent order.
#[derive(Clone, Debug)]
pub struct DatasetFolder {
    pub root: PathBuf,
    pub files: Vec<PathBuf>,
    /// Candidate files that failed to decode and were skipped.
    pub skipped: usize,
}

impl DatasetFolder {
    /// Enumerates `.ppm`/`.png` files sorted lexicographically by file name,
    /// probing each for decodability; undecodable files are skipped and
    /// counted.
    pub fn scan(root: &Path) -> Result<Self> {
        let entries = fs::read_dir(root).map_err(|e| io_err(root, e))?;
        let mut candidates: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && matches!(extension(p), Some("ppm") | Some("png")))
            .collect();
        candidates.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
        let mut files = Vec::new();
        let mut skipped = 0usize;
        for path in candidates {
            match load_image::<f32>(&path) {
                Ok(_) => files.push(path),
                Err(_) => skipped += 1,
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            files,
            skipped,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    /// Loads every image, optionally resizing to `(h, w)`.
    pub fn load_all<T: Scalar>(&self, resize: Option<(usize, usize)>) -> Result<Vec<Tensor<T>>> {
        self.files
            .iter()
            .map(|p| {
                let img = load_image::<T>(p)?;
                match resize {
                    Some((h, w)) => resize_bilinear(&img, h, w),
                    None => Ok(img),
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Writes a CSV with a header row, `.` decimal separator, `\n` newlines.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Per-iteration series of an optimization run; consistency experiments add
/// the across-run standard deviation column.
pub fn write_optim_csv<T: Scalar>(path: &Path, report: &OptimReport<T>) -> Result<()> {
    match &report.stddev_series {
        None => {
            let rows = report
                .iterations
                .iter()
                .map(|l| {
                    vec![
                        l.iter.to_string(),
                        l.total.to_string(),
                        l.activation_term.to_string(),
                        l.tv_term.to_string(),
                    ]
                })
                .collect::<Vec<_>>();
            write_csv(path, &["iter", "total", "act_term", "tv_term"], &rows)
        }
        Some(series) => {
            let rows = report
                .iterations
                .iter()
                .zip(series)
                .map(|(l, s)| {
                    vec![
                        l.iter.to_string(),
                        l.total.to_string(),
                        l.activation_term.to_string(),
                        l.tv_term.to_string(),
                        s.to_string(),
                    ]
                })
                .collect::<Vec<_>>();
            write_csv(
                path,
                &["iter", "total", "act_term", "tv_term", "stddev"],
                &rows,
            )
        }
    }
}
