//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255.
//!
//! Pixel values in `[-1, 1]` map to bytes by `round(127.5 * (x + 1))`,
//! rounding half away from zero and clamping to `[0, 255]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn encode_byte<F: Scalar>(x: F) -> u8 {
    let v = (127.5 * (x.as_f64() + 1.0)).round();
    if v.is_nan() {
        0
    } else {
        v.clamp(0.0, 255.0) as u8
    }
}

pub fn decode_byte<F: Scalar>(b: u8) -> F {
    F::lit(b as f64 / 127.5 - 1.0)
}

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

/// Encodes a `[1, H, W]` or `[H, W]` image.
pub fn encode_pgm<F: Scalar>(image: &Tensor<F>) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [h, w] | [1, h, w] => (*h, *w),
        s => return Err(Error::Image(format!("PGM needs a [1, H, W] image, got {s:?}"))),
    };
    let mut out = header("P5", w, h);
    out.extend(image.data().iter().map(|&x| encode_byte(x)));
    Ok(out)
}

/// Encodes a planar `[3, H, W]` image as interleaved RGB.
pub fn encode_ppm<F: Scalar>(image: &Tensor<F>) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [3, h, w] => (*h, *w),
        s => return Err(Error::Image(format!("PPM needs a [3, H, W] image, got {s:?}"))),
    };
    let plane = h * w;
    let d = image.data();
    let mut out = header("P6", w, h);
    for p in 0..plane {
        for c in 0..3 {
            out.push(encode_byte(d[c * plane + p]));
        }
    }
    Ok(out)
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let bad = |m: &str| Error::Image(format!("malformed header: {m}"));
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'5' | b'6') {
        return Err(bad("expected magic P5 or P6"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("expected a decimal number"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii number"))?;
        *field = text.parse().map_err(|_| bad("number out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing separator before payload"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Image(format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero image extent"));
    }
    Ok(Header {
        magic: [bytes[0], bytes[1]],
        width,
        height,
        offset: pos + 1,
    })
}

/// Decodes either format into a planar `[C, H, W]` tensor.
pub fn decode_image<F: Scalar>(bytes: &[u8]) -> Result<Tensor<F>> {
    decode_checked(bytes, None)
}

pub fn decode_pgm<F: Scalar>(bytes: &[u8]) -> Result<Tensor<F>> {
    decode_checked(bytes, Some(b'5'))
}

pub fn decode_ppm<F: Scalar>(bytes: &[u8]) -> Result<Tensor<F>> {
    decode_checked(bytes, Some(b'6'))
}

fn decode_checked<F: Scalar>(bytes: &[u8], want: Option<u8>) -> Result<Tensor<F>> {
    let h = parse_header(bytes)?;
    if let Some(kind) = want {
        if h.magic[1] != kind {
            return Err(Error::Image(format!("expected P{}, found P{}", kind as char, h.magic[1] as char)));
        }
    }
    let channels = if h.magic[1] == b'5' { 1 } else { 3 };
    let plane = h.width * h.height;
    let payload = &bytes[h.offset..];
    if payload.len() < plane * channels {
        return Err(Error::Image(format!(
            "truncated payload: {} of {} bytes",
            payload.len(),
            plane * channels
        )));
    }
    let mut data = vec![F::zero(); plane * channels];
    for p in 0..plane {
        for c in 0..channels {
            data[c * plane + p] = decode_byte(payload[p * channels + c]);
        }
    }
    Tensor::from_vec(&[channels, h.height, h.width], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping() {
        assert_eq!(encode_byte(-1.0f64), 0);
        assert_eq!(encode_byte(1.0f64), 255);
        assert_eq!(encode_byte(0.0f64), 128);
        assert_eq!(encode_byte(-3.0f64), 0);
        assert_eq!(encode_byte(7.0f64), 255);
        assert_eq!(decode_byte::<f64>(0), -1.0);
        assert_eq!(decode_byte::<f64>(255), 1.0);
    }

    #[test]
    fn pgm_header_and_payload() {
        let img = Tensor::from_vec(&[1, 1, 3], vec![-1.0f64, 0.0, 1.0]).unwrap();
        let bytes = encode_pgm(&img).unwrap();
        assert_eq!(bytes, b"P5\n3 1\n255\n\x00\x80\xff");
    }

    #[test]
    fn byte_round_trip_is_idempotent() {
        let mut bytes = b"P5\n# comment\n4 2\n255\n".to_vec();
        bytes.extend([0u8, 1, 2, 127, 128, 200, 254, 255]);
        let once: Tensor<f64> = decode_pgm(&bytes).unwrap();
        let twice: Tensor<f64> = decode_pgm(&encode_pgm(&once).unwrap()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn ppm_is_interleaved() {
        let img = Tensor::from_vec(&[3, 1, 2], vec![-1.0f64, 1.0, 0.0, 0.0, 1.0, -1.0]).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 128, 255, 255, 128, 0]);
        let back: Tensor<f64> = decode_ppm(&bytes).unwrap();
        assert_eq!(back.shape(), &[3, 1, 2]);
        assert_eq!(decode_image::<f64>(&bytes).unwrap(), back);
    }

    #[test]
    fn rejects_malformed() {
        assert!(decode_pgm::<f64>(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm::<f64>(b"P5\n1 1\n65535\n00").is_err());
        assert!(decode_pgm::<f64>(b"P5\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_pgm::<f64>(b"P5\n2").is_err());
        assert!(decode_ppm::<f64>(b"P5\n1 1\n255\n\x00").is_err());
        assert!(encode_pgm(&Tensor::<f64>::zeros(&[3, 2, 2])).is_err());
    }
}
