//! Real bitstreams: the container format and the image encoder/decoder
//! driving the range coder with the codec's probability models.
//!
//! Quantized latents are coded over the clamped support `[-64, 63]` plus an
//! escape symbol; escaped values follow as zig-zag bytes under a uniform
//! model. The conditional Gaussian tables are built per scale bin (64
//! geometric bins over the scale range), identically at encode and decode.

pub mod rangecoder;
pub mod tables;

use std::io::{Cursor, Read};
use std::sync::OnceLock;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::codec::{self, rate, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, LatentTensor};
use rangecoder::{RangeDecoder, RangeEncoder};
use tables::SymbolModel;

pub const MAGIC: &[u8; 4] = b"DLCF";
pub const FORMAT_VERSION: u8 = 1;
/// Bitstream file extension.
pub const EXTENSION: &str = "dlc";

/// Coded symbol support.
pub const SUPPORT_MIN: i64 = -64;
pub const SUPPORT_MAX: i64 = 63;
const N_SUPPORT: usize = 128;
const ESCAPE: usize = N_SUPPORT;

/// Number of geometric scale bins for conditional tables.
const SCALE_BINS: usize = 64;
const SCALE_MAX: f64 = 256.0;

/// A serialized compressed image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub version: u8,
    /// Digest of the checkpoint that produced this stream.
    pub model_id: [u8; 32],
    pub image_width: u16,
    pub image_height: u16,
    /// Position of the model's rate weight in the standard grid; 255 when
    /// the weight is not a grid point.
    pub lambda_index: u8,
    pub z_payload: Vec<u8>,
    pub y_payload: Vec<u8>,
}

impl Bitstream {
    fn checksum(&self) -> [u8; 4] {
        payload_checksum(&self.z_payload, &self.y_payload)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(50 + self.z_payload.len() + self.y_payload.len());
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.extend_from_slice(&self.model_id);
        out.write_u16::<LittleEndian>(self.image_width).unwrap();
        out.write_u16::<LittleEndian>(self.image_height).unwrap();
        out.push(self.lambda_index);
        out.write_u32::<LittleEndian>(self.z_payload.len() as u32)
            .unwrap();
        out.extend_from_slice(&self.checksum());
        out.extend_from_slice(&self.z_payload);
        out.extend_from_slice(&self.y_payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 50 {
            return Err(Error::Corrupt("shorter than header".into()));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let mut cur = Cursor::new(&bytes[4..]);
        let mut version = [0u8; 1];
        cur.read_exact(&mut version)?;
        let version = version[0];
        if version != FORMAT_VERSION {
            return Err(Error::Corrupt(format!(
                "unsupported format version {version}"
            )));
        }
        let mut model_id = [0u8; 32];
        cur.read_exact(&mut model_id)?;
        let image_width = cur.read_u16::<LittleEndian>()?;
        let image_height = cur.read_u16::<LittleEndian>()?;
        let mut lambda_index = [0u8; 1];
        cur.read_exact(&mut lambda_index)?;
        let z_len = cur.read_u32::<LittleEndian>()? as usize;
        let mut checksum = [0u8; 4];
        cur.read_exact(&mut checksum)?;
        let body_start = 4 + cur.position() as usize;
        if bytes.len() < body_start + z_len {
            return Err(Error::Corrupt("truncated hyper payload".into()));
        }
        let z_payload = bytes[body_start..body_start + z_len].to_vec();
        let y_payload = bytes[body_start + z_len..].to_vec();
        let stream = Self {
            version,
            model_id,
            image_width,
            image_height,
            lambda_index: lambda_index[0],
            z_payload,
            y_payload,
        };
        if stream.checksum() != checksum {
            return Err(Error::Corrupt("payload checksum mismatch".into()));
        }
        Ok(stream)
    }

    pub fn total_bytes(&self) -> usize {
        50 + self.z_payload.len() + self.y_payload.len()
    }

    /// Bits per source pixel of the full serialized stream.
    pub fn bpp(&self) -> f64 {
        8.0 * self.total_bytes() as f64
            / (self.image_width as f64 * self.image_height as f64)
    }
}

fn payload_checksum(z: &[u8], y: &[u8]) -> [u8; 4] {
    let mut hasher = Sha256::new();
    hasher.update(z);
    hasher.update(y);
    let digest = hasher.finalize();
    let mut out = [0u8; 4];
    out.copy_from_slice(&digest[0..4]);
    out
}

/// Index of `lambda` in the standard grid, or 255.
pub fn lambda_index(lambda: f64) -> u8 {
    crate::training::LAMBDA_GRID
        .iter()
        .position(|&l| (l - lambda).abs() < 1e-12)
        .map_or(255, |i| i as u8)
}

fn symbol_index(v: i64) -> usize {
    if (SUPPORT_MIN..=SUPPORT_MAX).contains(&v) {
        (v - SUPPORT_MIN) as usize
    } else {
        ESCAPE
    }
}

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

fn unzigzag(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

fn byte_model() -> &'static SymbolModel {
    static MODEL: OnceLock<SymbolModel> = OnceLock::new();
    MODEL.get_or_init(|| SymbolModel::uniform(256))
}

/// Encodes one value under `model`, escaping out-of-support values as
/// zig-zag bytes.
fn encode_value(enc: &mut RangeEncoder, v: i64, model: &SymbolModel) {
    let sym = symbol_index(v);
    let (cum, freq) = model.interval(sym);
    enc.encode(cum, freq);
    if sym == ESCAPE {
        let bytes = zigzag(v).to_le_bytes();
        let byte_model = byte_model();
        for b in bytes {
            let (cum, freq) = byte_model.interval(b as usize);
            enc.encode(cum, freq);
        }
    }
}

fn decode_value(dec: &mut RangeDecoder, model: &SymbolModel) -> Result<i64> {
    let sym = model.locate(dec.decode_cum());
    let (cum, freq) = model.interval(sym);
    dec.update(cum, freq)?;
    if sym == ESCAPE {
        let byte_model = byte_model();
        let mut bytes = [0u8; 8];
        for b in bytes.iter_mut() {
            let s = byte_model.locate(dec.decode_cum());
            let (cum, freq) = byte_model.interval(s);
            dec.update(cum, freq)?;
            *b = s as u8;
        }
        Ok(unzigzag(u64::from_le_bytes(bytes)))
    } else {
        Ok(sym as i64 + SUPPORT_MIN)
    }
}

/// Encodes a symbol sequence under one table. Losslessness contract:
/// `range_decode(range_encode(s), model, s.len()) == s` for any values.
pub fn range_encode(symbols: &[i64], model: &SymbolModel) -> Result<Vec<u8>> {
    if model.len() != N_SUPPORT + 1 {
        return Err(Error::Coder(format!(
            "expected {} symbols (support plus escape), got {}",
            N_SUPPORT + 1,
            model.len()
        )));
    }
    if symbols.is_empty() {
        return Ok(Vec::new());
    }
    let mut enc = RangeEncoder::new();
    for &v in symbols {
        encode_value(&mut enc, v, model);
    }
    Ok(enc.finish())
}

/// Decodes exactly `count` symbols.
pub fn range_decode(bytes: &[u8], model: &SymbolModel, count: usize) -> Result<Vec<i64>> {
    if model.len() != N_SUPPORT + 1 {
        return Err(Error::Coder("wrong alphabet size".into()));
    }
    if count == 0 {
        if bytes.is_empty() {
            return Ok(Vec::new());
        }
        return Err(Error::Coder("count mismatch: empty sequence".into()));
    }
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(decode_value(&mut dec, model)?);
    }
    Ok(out)
}

/// Builds the support+escape table for a distribution given by per-symbol
/// interval masses plus an escape mass for everything outside the support.
fn model_from_distribution(mass: impl Fn(i64) -> f64, total_in_support: f64) -> SymbolModel {
    let mut masses = Vec::with_capacity(N_SUPPORT + 1);
    for s in SUPPORT_MIN..=SUPPORT_MAX {
        masses.push(mass(s).max(rate::P_MIN));
    }
    let escape = (1.0 - total_in_support).max(rate::P_MIN);
    masses.push(escape);
    SymbolModel::from_masses(&masses).expect("support alphabet fits the frequency total")
}

/// Scale-bin index for a conditional scale value.
fn scale_bin(sigma: f64) -> usize {
    let s = sigma.clamp(rate::SCALE_FLOOR, SCALE_MAX);
    let t = (s / rate::SCALE_FLOOR).ln() / (SCALE_MAX / rate::SCALE_FLOOR).ln();
    ((t * SCALE_BINS as f64) as usize).min(SCALE_BINS - 1)
}

/// Representative scale of a bin (geometric center).
fn bin_scale(bin: usize) -> f64 {
    let ratio = SCALE_MAX / rate::SCALE_FLOOR;
    rate::SCALE_FLOOR * ratio.powf((bin as f64 + 0.5) / SCALE_BINS as f64)
}

fn gaussian_tables() -> &'static Vec<SymbolModel> {
    static TABLES: OnceLock<Vec<SymbolModel>> = OnceLock::new();
    TABLES.get_or_init(|| {
        (0..SCALE_BINS)
            .map(|bin| {
                let sigma = bin_scale(bin);
                let in_support: f64 = (SUPPORT_MIN..=SUPPORT_MAX)
                    .map(|s| rate::gaussian_interval_mass(s as f64, sigma))
                    .sum();
                model_from_distribution(
                    |s| rate::gaussian_interval_mass(s as f64, sigma),
                    in_support,
                )
            })
            .collect()
    })
}

fn logistic_model(loc: f64, log_scale: f64) -> SymbolModel {
    let s = log_scale.exp();
    let mut in_support = 0.0;
    for v in SUPPORT_MIN..=SUPPORT_MAX {
        in_support += rate::logistic_interval_mass(v as f64, loc, s);
    }
    model_from_distribution(|v| rate::logistic_interval_mass(v as f64, loc, s), in_support)
}

/// Compresses a single image under a trained model. `model_id` is the digest
/// of the checkpoint holding `params`.
pub fn encode_image(
    x: &ImageTensor,
    params: &ModelParams,
    model_id: [u8; 32],
    lambda_idx: u8,
) -> Result<Bitstream> {
    if x.batch() != 1 {
        return Err(Error::InvalidTensor("encode one image at a time".into()));
    }
    let (h, w) = (x.height(), x.width());
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::InvalidTensor("image larger than 65535 pixels".into()));
    }

    let div = params.divisibility();
    let (padded, _) = codec::pad_to_multiple(x, div);
    let y = codec::analyze(&padded, params)?;
    let z = codec::hyper_analyze(&y, params)?;
    let z_hat = codec::quantize_eval(&z);
    let ep = codec::hyper_synthesize(&z_hat, params)?;
    let y_hat = codec::quantize_eval(&y);

    // Hyper payload: per-channel factorized tables, fixed (c, h, w) order.
    let mut enc = RangeEncoder::new();
    let zv = z_hat.view();
    let (_, c, zh, zw) = z_hat.dim();
    for ci in 0..c {
        let model = logistic_model(params.prior_loc[ci], params.prior_log_scale[ci]);
        for hi in 0..zh {
            for wi in 0..zw {
                encode_value(&mut enc, zv[[0, ci, hi, wi]] as i64, &model);
            }
        }
    }
    let z_payload = enc.finish();

    // Main payload: per-element Gaussian tables via scale binning.
    let tables = gaussian_tables();
    let mut enc = RangeEncoder::new();
    let yv = y_hat.view();
    let (_, yc, yh, yw) = y_hat.dim();
    for ci in 0..yc {
        for hi in 0..yh {
            for wi in 0..yw {
                let bin = scale_bin(ep.scale[[0, ci, hi, wi]]);
                encode_value(&mut enc, yv[[0, ci, hi, wi]] as i64, &tables[bin]);
            }
        }
    }
    let y_payload = enc.finish();

    Ok(Bitstream {
        version: FORMAT_VERSION,
        model_id,
        image_width: w as u16,
        image_height: h as u16,
        lambda_index: lambda_idx,
        z_payload,
        y_payload,
    })
}

/// Decoded image plus the exact quantized latents, for consistency checks.
pub struct DecodeOutput {
    pub image: ImageTensor,
    pub y_hat: LatentTensor,
    pub z_hat: LatentTensor,
}

/// Reconstructs an image from a bitstream. Refuses checkpoints whose digest
/// does not match the stream's `model_id`.
pub fn decode_image(
    stream: &Bitstream,
    params: &ModelParams,
    checkpoint_digest: [u8; 32],
) -> Result<DecodeOutput> {
    if stream.model_id != checkpoint_digest {
        return Err(Error::DigestMismatch {
            expected: crate::checkpoint::digest_hex(&stream.model_id),
            got: crate::checkpoint::digest_hex(&checkpoint_digest),
        });
    }
    let div = params.divisibility();
    let (w, h) = (stream.image_width as usize, stream.image_height as usize);
    let padded_h = h.div_ceil(div) * div;
    let padded_w = w.div_ceil(div) * div;
    let c = params.descriptor.latent_channels;
    let yh = padded_h / params.descriptor.analysis_factor();
    let yw = padded_w / params.descriptor.analysis_factor();
    let zh = yh / params.descriptor.hyper_factor();
    let zw = yw / params.descriptor.hyper_factor();

    // Hyper payload.
    let mut dec = RangeDecoder::new(&stream.z_payload)?;
    let mut z_hat = ndarray::Array4::<f64>::zeros((1, c, zh, zw));
    for ci in 0..c {
        let model = logistic_model(params.prior_loc[ci], params.prior_log_scale[ci]);
        for hi in 0..zh {
            for wi in 0..zw {
                z_hat[[0, ci, hi, wi]] = decode_value(&mut dec, &model)? as f64;
            }
        }
    }
    let z_hat = LatentTensor::new(z_hat)?;
    let ep = codec::hyper_synthesize(&z_hat, params)?;

    // Main payload.
    let tables = gaussian_tables();
    let mut dec = RangeDecoder::new(&stream.y_payload)?;
    let mut y_hat = ndarray::Array4::<f64>::zeros((1, c, yh, yw));
    for ci in 0..c {
        for hi in 0..yh {
            for wi in 0..yw {
                let bin = scale_bin(ep.scale[[0, ci, hi, wi]]);
                y_hat[[0, ci, hi, wi]] = decode_value(&mut dec, &tables[bin])? as f64;
            }
        }
    }
    let y_hat = LatentTensor::new(y_hat)?;

    let padded_image = codec::synthesize(&y_hat, params)?;
    let image = codec::crop_to(&padded_image, h, w);
    Ok(DecodeOutput { image, y_hat, z_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_model(rng: &mut impl Rng) -> SymbolModel {
        let mut masses = vec![0.0f64; N_SUPPORT + 1];
        for m in masses.iter_mut() {
            *m = rng.random_range(0.0..1.0f64).powi(3);
        }
        SymbolModel::from_masses(&masses).unwrap()
    }

    #[test]
    fn empty_sequence_round_trips_to_empty() {
        let model = SymbolModel::from_masses(&vec![1.0; N_SUPPORT + 1]).unwrap();
        let bytes = range_encode(&[], &model).unwrap();
        assert!(bytes.is_empty());
        let back = range_decode(&bytes, &model, 0).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn random_tables_and_sequences_round_trip() {
        let mut rng = crate::rng::stream(92, "coding", 0);
        for _ in 0..50 {
            let model = random_model(&mut rng);
            let len = rng.random_range(1..400);
            let symbols: Vec<i64> = (0..len)
                .map(|_| {
                    if rng.random_range(0.0..1.0) < 0.05 {
                        rng.random_range(-100_000..100_000)
                    } else {
                        rng.random_range(SUPPORT_MIN..=SUPPORT_MAX)
                    }
                })
                .collect();
            let bytes = range_encode(&symbols, &model).unwrap();
            let back = range_decode(&bytes, &model, symbols.len()).unwrap();
            assert_eq!(symbols, back);
        }
    }

    #[test]
    fn all_escape_sequence_round_trips() {
        let mut rng = crate::rng::stream(93, "coding", 0);
        let model = random_model(&mut rng);
        let symbols: Vec<i64> = (0..300)
            .map(|_| {
                let v: i64 = rng.random_range(1_000..10_000_000);
                if rng.random_range(0.0..1.0) < 0.5 {
                    -v
                } else {
                    v
                }
            })
            .collect();
        let bytes = range_encode(&symbols, &model).unwrap();
        let back = range_decode(&bytes, &model, symbols.len()).unwrap();
        assert_eq!(symbols, back);
    }

    #[test]
    fn coder_length_near_shannon_bound() {
        let mut rng = crate::rng::stream(94, "coding", 0);
        // A peaked table, like a trained latent distribution.
        let mut masses = vec![0.0f64; N_SUPPORT + 1];
        for (i, m) in masses.iter_mut().enumerate().take(N_SUPPORT) {
            let v = i as f64 + SUPPORT_MIN as f64;
            *m = (-v.abs() / 2.0).exp();
        }
        let model = SymbolModel::from_masses(&masses).unwrap();

        // Draw 1e6 symbols from the table distribution itself.
        let n = 1_000_000usize;
        let mut symbols = Vec::with_capacity(n);
        let mut expected_bits = 0.0;
        for _ in 0..n {
            let slot = rng.random_range(0..rangecoder::TOTAL);
            let sym = model.locate(slot);
            expected_bits += model.symbol_bits(sym);
            symbols.push(if sym == ESCAPE {
                1000
            } else {
                sym as i64 + SUPPORT_MIN
            });
        }
        let bytes = range_encode(&symbols, &model).unwrap();
        let measured_bits = 8.0 * bytes.len() as f64;
        // Escapes carry 8 extra bytes each; account for them in the bound.
        let escapes = symbols.iter().filter(|&&s| s == 1000).count() as f64;
        let bound = expected_bits + escapes * 64.0;
        assert!(
            measured_bits <= bound * 1.001 + 16.0 * 8.0,
            "measured {measured_bits} vs bound {bound}"
        );
        let back = range_decode(&bytes, &model, n).unwrap();
        assert_eq!(symbols, back);
    }

    #[test]
    fn bitstream_header_round_trip() {
        let stream = Bitstream {
            version: FORMAT_VERSION,
            model_id: [7u8; 32],
            image_width: 640,
            image_height: 480,
            lambda_index: 3,
            z_payload: vec![1, 2, 3, 4, 5],
            y_payload: vec![9, 8, 7],
        };
        let bytes = stream.to_bytes();
        let back = Bitstream::from_bytes(&bytes).unwrap();
        assert_eq!(stream, back);
        assert_eq!(back.total_bytes(), bytes.len());

        // Any flipped payload byte must be caught by the checksum.
        let mut corrupted = bytes.clone();
        let idx = corrupted.len() - 2;
        corrupted[idx] ^= 0x40;
        assert!(matches!(
            Bitstream::from_bytes(&corrupted),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn lambda_grid_indexing() {
        assert_eq!(lambda_index(0.013), 3);
        assert_eq!(lambda_index(0.0018), 0);
        assert_eq!(lambda_index(0.5), 255);
    }

    #[test]
    fn scale_bins_cover_range() {
        assert_eq!(scale_bin(rate::SCALE_FLOOR), 0);
        assert_eq!(scale_bin(SCALE_MAX), SCALE_BINS - 1);
        assert_eq!(scale_bin(1e9), SCALE_BINS - 1);
        for bin in 0..SCALE_BINS {
            assert_eq!(scale_bin(bin_scale(bin)), bin);
        }
    }
}
