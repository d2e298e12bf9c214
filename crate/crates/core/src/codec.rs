//! Binary codecs for the parameter and grid-field file formats, plus the
//! normalization-stats sidecar.
//!
//! Both formats are little-endian and must round-trip bit-exactly.
//!
//! Parameter file (`SFDT`): magic, version u32, tensor count u32, then
//! per tensor: name length u16, name bytes, rank u8, dims u32 x rank,
//! f32 data.
//!
//! Grid file (`SFGF`): magic, version u32, L/H/W u32, land fill f32,
//! land mask as packed bits (row-major, LSB first), then f32 data in
//! layer-major order. A fill value of -9999.0 marks physical units,
//! 0.0 marks normalized units.

use thiserror::Error;

use crate::synth::{GridField, NormState, LAND_FILL_PHYSICAL};

pub const SFDT_MAGIC: &[u8; 4] = b"SFDT";
pub const SFGF_MAGIC: &[u8; 4] = b"SFGF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bad magic: expected {expected}, found {found:?}")]
    BadMagic { expected: &'static str, found: Vec<u8> },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed file: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, CodecError>;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CodecError::Truncated {
                offset: self.pos,
                needed: self.pos + n - self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(4 * n)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(CodecError::Malformed(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn check_magic(r: &mut Reader, expected: &'static [u8; 4], name: &'static str) -> Result<()> {
    let found = r.take(4)?;
    if found != expected {
        return Err(CodecError::BadMagic { expected: name, found: found.to_vec() });
    }
    Ok(())
}

/// Named-tensor entry as serialized in a parameter file.
pub type ParamEntry = (String, Vec<usize>, Vec<f32>);

pub fn encode_params(entries: &[(&str, &[usize], &[f32])]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SFDT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, data) in entries {
        let nb = name.as_bytes();
        assert!(nb.len() <= u16::MAX as usize, "tensor name too long");
        out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        out.extend_from_slice(nb);
        assert!(shape.len() <= u8::MAX as usize);
        out.push(shape.len() as u8);
        for &d in *shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in *data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<Vec<ParamEntry>> {
    let mut r = Reader::new(bytes);
    check_magic(&mut r, SFDT_MAGIC, "SFDT")?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| CodecError::Malformed(format!("tensor name not utf-8: {e}")))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f32_vec(numel)?;
        entries.push((name, shape, data));
    }
    r.done()?;
    Ok(entries)
}

pub fn encode_field(field: &GridField) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SFGF_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(field.layers as u32).to_le_bytes());
    out.extend_from_slice(&(field.height as u32).to_le_bytes());
    out.extend_from_slice(&(field.width as u32).to_le_bytes());
    let fill: f32 = match field.norm_state {
        NormState::Physical => LAND_FILL_PHYSICAL,
        NormState::Normalized => 0.0,
    };
    out.extend_from_slice(&fill.to_le_bytes());
    let hw = field.cell_count();
    let mut packed = vec![0u8; hw.div_ceil(8)];
    for (c, &m) in field.land_mask.iter().enumerate() {
        if m == 1 {
            packed[c / 8] |= 1 << (c % 8);
        }
    }
    out.extend_from_slice(&packed);
    for v in &field.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<GridField> {
    let mut r = Reader::new(bytes);
    check_magic(&mut r, SFGF_MAGIC, "SFGF")?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let layers = r.u32()? as usize;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    if layers == 0 || height == 0 || width == 0 {
        return Err(CodecError::Malformed(format!("bad dims {layers}x{height}x{width}")));
    }
    let fill = r.f32()?;
    let norm_state = if fill == LAND_FILL_PHYSICAL {
        NormState::Physical
    } else if fill == 0.0 {
        NormState::Normalized
    } else {
        return Err(CodecError::Malformed(format!("unknown land fill value {fill}")));
    };
    let hw = height * width;
    let packed = r.take(hw.div_ceil(8))?;
    let land_mask: Vec<u8> = (0..hw).map(|c| (packed[c / 8] >> (c % 8)) & 1).collect();
    let data = r.f32_vec(layers * hw)?;
    r.done()?;
    Ok(GridField { layers, height, width, data, land_mask, norm_state, stats: None })
}

/// `layer,mean,std` CSV for the normalization sidecar. Uses Rust's
/// shortest round-trip float formatting so parsing recovers the exact
/// f64 values.
pub fn render_stats_csv(stats: &crate::synth::NormStats) -> String {
    let mut out = String::from("layer,mean,std\n");
    for (l, s) in stats.per_layer.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", l, s.mean, s.std));
    }
    out
}

pub fn parse_stats_csv(text: &str) -> Result<crate::synth::NormStats> {
    let mut per_layer = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != "layer,mean,std" {
                return Err(CodecError::Malformed(format!("bad stats header '{line}'")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(CodecError::Malformed(format!("bad stats row '{line}'")));
        }
        let layer: usize = parts[0]
            .trim()
            .parse()
            .map_err(|e| CodecError::Malformed(format!("bad layer index: {e}")))?;
        if layer != per_layer.len() {
            return Err(CodecError::Malformed(format!("stats rows out of order at layer {layer}")));
        }
        let mean: f64 = parts[1]
            .trim()
            .parse()
            .map_err(|e| CodecError::Malformed(format!("bad mean: {e}")))?;
        let std: f64 = parts[2]
            .trim()
            .parse()
            .map_err(|e| CodecError::Malformed(format!("bad std: {e}")))?;
        per_layer.push(crate::synth::LayerStat { mean, std });
    }
    if per_layer.is_empty() {
        return Err(CodecError::Malformed("stats file has no rows".into()));
    }
    Ok(crate::synth::NormStats { per_layer })
}
