use std::fs;
use std::path::Path;

use super::ChartError;

/// 8-bit grayscale raster, row-major, row 0 at the top.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, fill: u8) -> Self {
        Self {
            height,
            width,
            pixels: vec![fill; height * width],
        }
    }

    pub fn from_pixels(height: usize, width: usize, pixels: Vec<u8>) -> Option<Self> {
        (height > 0 && width > 0 && pixels.len() == height * width).then_some(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.pixels[row * self.width + col] = value;
    }

    /// Sets the pixel only if that makes it darker.
    pub fn darken(&mut self, row: usize, col: usize, value: u8) {
        let p = &mut self.pixels[row * self.width + col];
        *p = (*p).min(value);
    }

    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, String> {
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated header".into());
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(format!("unsupported magic {:?}", fields[0]));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| format!("bad header field {s:?}"))
        };
        let width = parse(&fields[1])?;
        let height = parse(&fields[2])?;
        if parse(&fields[3])? != 255 {
            return Err("maxval must be 255".into());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let raster = bytes.get(pos..).unwrap_or_default();
        if raster.len() != width * height {
            return Err(format!(
                "expected {} raster bytes, found {}",
                width * height,
                raster.len()
            ));
        }
        Self::from_pixels(height, width, raster.to_vec()).ok_or_else(|| "empty image".into())
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), ChartError> {
        fs::write(path, self.to_pgm()).map_err(|e| ChartError::io(path, e))
    }

    pub fn read_pgm(path: &Path) -> Result<Self, ChartError> {
        let bytes = fs::read(path).map_err(|e| ChartError::io(path, e))?;
        Self::from_pgm(&bytes).map_err(|message| ChartError::Pgm {
            path: path.to_path_buf(),
            message,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let mut img = GrayImage::new(3, 4, 255);
        img.set(1, 2, 7);
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(GrayImage::from_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_rejects_short_raster() {
        let mut bytes = GrayImage::new(3, 4, 0).to_pgm();
        bytes.pop();
        assert!(GrayImage::from_pgm(&bytes).is_err());
        assert!(GrayImage::from_pgm(b"P6\n1 1\n255\n\0").is_err());
    }
}
