//! Reading and writing the numpy `.npy` array format.
//!
//! Writing always produces format version 1.0, C order, little-endian, with the
//! header padded to a 64-byte boundary the same way numpy does. Reading accepts
//! versions 1.0 through 3.0 and either memory order.
//!
//! bfloat16 has no native numpy descriptor. Dumps carry it as raw 16-bit
//! patterns (`<u2`, `<V2`, `|V2`) or under the `bfloat16` descriptor name used
//! by `ml_dtypes`; the manifest dtype decides how such payloads are decoded.

use std::io::{Read, Write};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Element types this crate knows how to decode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    F32,
    F64,
    /// Two raw bytes per element; decoded as bfloat16 when the caller says so.
    Raw16,
    I32,
    I64,
}

impl ElementType {
    fn from_descr(descr: &str) -> Option<Self> {
        Some(match descr {
            "<f4" => ElementType::F32,
            "<f8" => ElementType::F64,
            "<u2" | "<V2" | "|V2" | "bfloat16" | "<bfloat16" => ElementType::Raw16,
            "<i4" => ElementType::I32,
            "<i8" => ElementType::I64,
            _ => return None,
        })
    }

    fn descr(self) -> &'static str {
        match self {
            ElementType::F32 => "<f4",
            ElementType::F64 => "<f8",
            ElementType::Raw16 => "<u2",
            ElementType::I32 => "<i4",
            ElementType::I64 => "<i8",
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::Raw16 => 2,
            ElementType::F32 | ElementType::I32 => 4,
            ElementType::F64 | ElementType::I64 => 8,
        }
    }
}

/// A decoded header plus the raw little-endian payload, always in C order.
#[derive(Clone, Debug)]
pub struct RawArray {
    pub element: ElementType,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

#[derive(Debug)]
pub enum NpyError {
    Io(std::io::Error),
    Format(String),
    UnsupportedDtype(String),
}

impl From<std::io::Error> for NpyError {
    fn from(e: std::io::Error) -> Self {
        NpyError::Io(e)
    }
}

fn format_err<T>(msg: impl Into<String>) -> Result<T, NpyError> {
    Err(NpyError::Format(msg.into()))
}

impl RawArray {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn elements(&self) -> impl Iterator<Item = &[u8]> {
        self.payload.chunks_exact(self.element.size())
    }

    /// Decode the payload as f64 values in C order. `bf16` selects how two-byte
    /// payloads are interpreted.
    pub fn to_f64(&self, bf16: bool) -> Result<Vec<f64>, NpyError> {
        let out = match self.element {
            ElementType::F64 => self
                .elements()
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
            ElementType::F32 => self
                .elements()
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            ElementType::Raw16 if bf16 => self
                .elements()
                .map(|b| bf16_to_f64(u16::from_le_bytes([b[0], b[1]])))
                .collect(),
            ElementType::I32 => self
                .elements()
                .map(|b| i32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            ElementType::I64 => self
                .elements()
                .map(|b| i64::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            ElementType::Raw16 => {
                return Err(NpyError::UnsupportedDtype(
                    "16-bit payload without bf16 manifest dtype".into(),
                ))
            }
        };
        Ok(out)
    }

    pub fn to_i64(&self) -> Result<Vec<i64>, NpyError> {
        match self.element {
            ElementType::I64 => Ok(self
                .elements()
                .map(|b| i64::from_le_bytes(b.try_into().unwrap()))
                .collect()),
            ElementType::I32 => Ok(self
                .elements()
                .map(|b| i32::from_le_bytes(b.try_into().unwrap()) as i64)
                .collect()),
            other => Err(NpyError::UnsupportedDtype(other.descr().into())),
        }
    }
}

pub fn bf16_to_f64(bits: u16) -> f64 {
    f32::from_bits((bits as u32) << 16) as f64
}

/// Truncating conversion; exact for values that were decoded from bf16.
pub fn f64_to_bf16_bits(v: f64) -> u16 {
    ((v as f32).to_bits() >> 16) as u16
}

pub fn read<R: Read>(reader: &mut R) -> Result<RawArray, NpyError> {
    let mut magic = [0u8; 6];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return format_err("bad magic string");
    }
    let mut version = [0u8; 2];
    reader.read_exact(&mut version)?;
    let header_len = match version[0] {
        1 => {
            let mut b = [0u8; 2];
            reader.read_exact(&mut b)?;
            u16::from_le_bytes(b) as usize
        }
        2 | 3 => {
            let mut b = [0u8; 4];
            reader.read_exact(&mut b)?;
            u32::from_le_bytes(b) as usize
        }
        v => return format_err(format!("unsupported format version {v}.{}", version[1])),
    };
    let mut header = vec![0u8; header_len];
    reader.read_exact(&mut header)?;
    let header =
        String::from_utf8(header).map_err(|_| NpyError::Format("non-UTF-8 header".into()))?;
    let dict = HeaderDict::parse(&header)?;
    let element = ElementType::from_descr(&dict.descr)
        .ok_or(NpyError::UnsupportedDtype(dict.descr.clone()))?;

    let count: usize = dict.shape.iter().product();
    let mut payload = vec![0u8; count * element.size()];
    reader.read_exact(&mut payload)?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return format_err("trailing bytes after payload");
    }

    if dict.fortran_order && dict.shape.len() > 1 {
        payload = fortran_to_c(&payload, &dict.shape, element.size());
    }
    Ok(RawArray {
        element,
        shape: dict.shape,
        payload,
    })
}

pub fn write<W: Write>(writer: &mut W, array: &RawArray) -> std::io::Result<()> {
    let shape = match array.shape.len() {
        1 => format!("({},)", array.shape[0]),
        _ => format!(
            "({})",
            array
                .shape
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        array.element.descr(),
        shape
    );
    // magic(6) + version(2) + len(2) + header + '\n' padded to 64 bytes
    let unpadded = 10 + header.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');

    writer.write_all(MAGIC)?;
    writer.write_all(&[1, 0])?;
    writer.write_all(&(header.len() as u16).to_le_bytes())?;
    writer.write_all(header.as_bytes())?;
    writer.write_all(&array.payload)
}

impl RawArray {
    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Self {
        let payload = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        RawArray {
            element: ElementType::F64,
            shape,
            payload,
        }
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f64]) -> Self {
        let payload = values
            .iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect();
        RawArray {
            element: ElementType::F32,
            shape,
            payload,
        }
    }

    pub fn from_bf16(shape: Vec<usize>, values: &[f64]) -> Self {
        let payload = values
            .iter()
            .flat_map(|v| f64_to_bf16_bits(*v).to_le_bytes())
            .collect();
        RawArray {
            element: ElementType::Raw16,
            shape,
            payload,
        }
    }

    pub fn from_i64(values: &[i64]) -> Self {
        let payload = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        RawArray {
            element: ElementType::I64,
            shape: vec![values.len()],
            payload,
        }
    }
}

fn fortran_to_c(payload: &[u8], shape: &[usize], size: usize) -> Vec<u8> {
    let count: usize = shape.iter().product();
    let mut out = vec![0u8; payload.len()];
    let ndim = shape.len();
    let mut idx = vec![0usize; ndim];
    for f in 0..count {
        // f enumerates elements in Fortran order; idx holds the multi-index
        let mut c = 0;
        for (d, &i) in idx.iter().enumerate() {
            c = c * shape[d] + i;
        }
        out[c * size..(c + 1) * size].copy_from_slice(&payload[f * size..(f + 1) * size]);
        for (d, i) in idx.iter_mut().enumerate() {
            *i += 1;
            if *i < shape[d] {
                break;
            }
            *i = 0;
        }
    }
    out
}

struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl HeaderDict {
    fn parse(header: &str) -> Result<Self, NpyError> {
        let body = header.trim();
        let body = body
            .strip_prefix('{')
            .and_then(|b| b.strip_suffix('}'))
            .ok_or_else(|| NpyError::Format("header is not a dict literal".into()))?;

        let descr = value_after(body, "descr")?;
        let descr = descr
            .split(['\'', '"'])
            .nth(1)
            .ok_or_else(|| NpyError::Format("descr is not a string".into()))?
            .to_string();

        let fortran = value_after(body, "fortran_order")?;
        let fortran_order = if fortran.starts_with("True") {
            true
        } else if fortran.starts_with("False") {
            false
        } else {
            return format_err("fortran_order is not a bool");
        };

        let shape = value_after(body, "shape")?;
        let close = shape
            .find(')')
            .ok_or_else(|| NpyError::Format("shape is not a tuple".into()))?;
        let inner = shape
            .strip_prefix('(')
            .ok_or_else(|| NpyError::Format("shape is not a tuple".into()))?;
        let shape = inner[..close - 1]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.trim_end_matches('L')
                    .parse::<usize>()
                    .map_err(|_| NpyError::Format(format!("bad shape entry `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(HeaderDict {
            descr,
            fortran_order,
            shape,
        })
    }
}

fn value_after<'a>(body: &'a str, key: &str) -> Result<&'a str, NpyError> {
    for quote in ['\'', '"'] {
        let needle = format!("{quote}{key}{quote}");
        if let Some(pos) = body.find(&needle) {
            let rest = body[pos + needle.len()..].trim_start();
            let rest = rest
                .strip_prefix(':')
                .ok_or_else(|| NpyError::Format(format!("missing ':' after {key}")))?;
            return Ok(rest.trim_start());
        }
    }
    format_err(format!("header lacks key '{key}'"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(a: &RawArray) -> (Vec<u8>, RawArray) {
        let mut buf = Vec::new();
        write(&mut buf, a).unwrap();
        let back = read(&mut buf.as_slice()).unwrap();
        (buf, back)
    }

    #[test]
    fn header_is_aligned_like_numpy() {
        let a = RawArray::from_f64(vec![4, 3], &[0.0; 12]);
        let (buf, back) = roundtrip(&a);
        let header_len = u16::from_le_bytes([buf[8], buf[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
        assert_eq!(buf[10 + header_len - 1], b'\n');
        assert_eq!(back.shape, vec![4, 3]);
        let text = std::str::from_utf8(&buf[10..10 + header_len]).unwrap();
        assert!(text.starts_with("{'descr': '<f8', 'fortran_order': False, 'shape': (4, 3), }"));
    }

    #[test]
    fn one_dimensional_shape_has_trailing_comma() {
        let a = RawArray::from_i64(&[1, 2, 3]);
        let (buf, back) = roundtrip(&a);
        assert!(std::str::from_utf8(&buf[10..])
            .unwrap()
            .contains("'shape': (3,)"));
        assert_eq!(back.to_i64().unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn fortran_payload_is_reordered() {
        // 2x3 matrix [[1,2,3],[4,5,6]] stored column-major
        let header = "{'descr': '<f8', 'fortran_order': True, 'shape': (2, 3), }";
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&[1, 0]);
        buf.extend_from_slice(&(header.len() as u16 + 1).to_le_bytes());
        buf.extend_from_slice(header.as_bytes());
        buf.push(b'\n');
        for v in [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let a = read(&mut buf.as_slice()).unwrap();
        assert_eq!(a.to_f64(false).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn bf16_roundtrip_is_exact() {
        let vals = [1.0, -2.5, 0.15625, 3.0e38];
        let a = RawArray::from_bf16(vec![4], &vals);
        let (_, back) = roundtrip(&a);
        let decoded = back.to_f64(true).unwrap();
        let again = RawArray::from_bf16(vec![4], &decoded);
        assert_eq!(again.payload, a.payload);
        assert_eq!(decoded[0], 1.0);
        assert_eq!(decoded[1], -2.5);
        assert!(back.to_f64(false).is_err());
    }

    #[test]
    fn rejects_truncated_and_foreign_input() {
        let a = RawArray::from_f64(vec![2], &[1.0, 2.0]);
        let mut buf = Vec::new();
        write(&mut buf, &a).unwrap();
        buf.pop();
        assert!(read(&mut buf.as_slice()).is_err());
        assert!(read(&mut &b"PK\x03\x04junkjunk"[..]).is_err());

        let header = "{'descr': '>f8', 'fortran_order': False, 'shape': (1,), }\n";
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&[1, 0]);
        buf.extend_from_slice(&(header.len() as u16).to_le_bytes());
        buf.extend_from_slice(header.as_bytes());
        buf.extend_from_slice(&[0; 8]);
        assert!(matches!(
            read(&mut buf.as_slice()),
            Err(NpyError::UnsupportedDtype(_))
        ));
    }
}
