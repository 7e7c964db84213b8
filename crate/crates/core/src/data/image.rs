//! Binary PPM (P6) and PGM (P5) files with maxval 255.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("bad magic {0:?}: expected P5 or P6")]
    BadMagic(String),
    #[error("unsupported maxval {0}: only 255 is accepted")]
    Maxval(u32),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{channels}-channel image cannot be stored as PPM/PGM")]
    Channels { channels: usize },
}

/// 8-bit interleaved image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    /// Quantizes a planar `[c, h, w]` buffer of values in `[0, 1]` with
    /// `round(v·255)`; values outside the range are clamped.
    pub fn from_planar(channels: usize, height: usize, width: usize, planes: &[f64]) -> Self {
        assert_eq!(planes.len(), channels * height * width);
        let hw = height * width;
        let mut data = vec![0u8; planes.len()];
        for c in 0..channels {
            for i in 0..hw {
                data[i * channels + c] = (planes[c * hw + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// Planar `[c, h, w]` values `byte / 255`.
    pub fn to_planar(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; self.data.len()];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &b) in px.iter().enumerate() {
                out[c * hw + i] = b as f64 / 255.0;
            }
        }
        out
    }

    pub fn encode(&self) -> Result<Vec<u8>, ImageError> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(ImageError::Channels { channels: c }),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos).unwrap_or_default();
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            _ => return Err(ImageError::BadMagic(magic)),
        };
        let mut field = |name: &str| -> Result<u32, ImageError> {
            let tok = next_token(bytes, &mut pos)
                .ok_or_else(|| ImageError::Header(format!("missing {name}")))?;
            tok.parse()
                .map_err(|_| ImageError::Header(format!("{name} {tok:?} is not an integer")))
        };
        let width = field("width")? as usize;
        let height = field("height")? as usize;
        let maxval = field("maxval")?;
        if width == 0 || height == 0 {
            return Err(ImageError::Header(format!("empty image {width}x{height}")));
        }
        if maxval != 255 {
            return Err(ImageError::Maxval(maxval));
        }
        // exactly one whitespace byte separates the header from the payload
        pos += 1;
        let expected = width * height * channels;
        let payload = bytes.get(pos..).unwrap_or(&[]);
        if payload.len() < expected {
            return Err(ImageError::Truncated {
                expected,
                found: payload.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data: payload[..expected].to_vec(),
        })
    }
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn read_image(path: &Path) -> crate::Result<Image> {
    let bytes = fs::read(path).map_err(|e| crate::Error::io(path, e))?;
    Image::decode(&bytes).map_err(|source| crate::Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_image(image: &Image, path: &Path) -> crate::Result<()> {
    let bytes = image.encode().map_err(|source| crate::Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, bytes).map_err(|e| crate::Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn white_ppm_round_trip_is_byte_exact() {
        let img = Image {
            width: 1,
            height: 1,
            channels: 3,
            data: vec![255, 255, 255],
        };
        let bytes = img.encode().unwrap();
        assert_eq!(bytes, b"P6\n1 1\n255\n\xff\xff\xff");
        let back = Image::decode(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn parses_minimal_pgm() {
        let img = Image::decode(b"P5 2 2 255 \x00\x40\x80\xff").unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 2, 1));
        assert_eq!(img.to_planar(), vec![0.0, 64.0 / 255.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = Image::decode(b"P5\n# made by hand\n1 1\n# depth\n255\n\x07").unwrap();
        assert_eq!(img.data, vec![7]);
    }

    #[test]
    fn distinct_diagnostics() {
        assert!(matches!(Image::decode(b"P7 1 1 255 \x00"), Err(ImageError::BadMagic(m)) if m == "P7"));
        assert!(matches!(Image::decode(b"P5 1 1 65535 \x00\x00"), Err(ImageError::Maxval(65535))));
        assert!(matches!(
            Image::decode(b"P6 2 1 255 \x00\x00\x00"),
            Err(ImageError::Truncated { expected: 6, found: 3 })
        ));
        assert!(matches!(Image::decode(b"P5 x 1 255 "), Err(ImageError::Header(_))));
        assert!(matches!(Image::decode(b""), Err(ImageError::BadMagic(_))));
    }

    #[test]
    fn quantization_rounds() {
        let img = Image::from_planar(1, 1, 4, &[0.0, 0.5, 1.0 / 255.0 * 0.49, 2.0]);
        assert_eq!(img.data, vec![0, 128, 0, 255]);
    }

    #[test]
    fn planar_interleave_round_trip() {
        let planes: Vec<f64> = (0..12).map(|i| i as f64 / 255.0).collect();
        let img = Image::from_planar(3, 2, 2, &planes);
        assert_eq!(img.data, vec![0, 4, 8, 1, 5, 9, 2, 6, 10, 3, 7, 11]);
        assert_eq!(img.to_planar(), planes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = Image {
            width: 3,
            height: 2,
            channels: 1,
            data: vec![1, 2, 3, 4, 5, 6],
        };
        write_image(&img, &path).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
        let missing = read_image(&dir.path().join("nope.pgm")).unwrap_err();
        assert!(missing.to_string().contains("nope.pgm"));
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity(
            w in 1usize..9, h in 1usize..9, rgb in any::<bool>(),
            pool in prop::collection::vec(any::<u8>(), 192)
        ) {
            let channels = if rgb { 3 } else { 1 };
            let data = pool[..w * h * channels].to_vec();
            let img = Image { width: w, height: h, channels, data };
            let bytes = img.encode().unwrap();
            let back = Image::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode().unwrap(), bytes);
            prop_assert_eq!(back, img);
        }

        #[test]
        fn bytes_survive_float_round_trip(data in prop::collection::vec(any::<u8>(), 12)) {
            let img = Image { width: 2, height: 2, channels: 3, data };
            let again = Image::from_planar(3, 2, 2, &img.to_planar());
            prop_assert_eq!(again, img);
        }
    }
}
