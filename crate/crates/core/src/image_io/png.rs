use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use png::{BitDepth, ColorType, Transformations};

use super::{InMemorySlide, PixelBlock, RowCursor, SlideSource, StripSink};
use crate::error::{Error, Result};

/// A PNG decoded into memory. PNG has no random access, so the whole image
/// is held; use TIFF for slides that do not fit in memory.
#[derive(Debug)]
pub struct PngSlide {
    inner: InMemorySlide,
}

impl PngSlide {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Open {
            path: path.to_path_buf(),
            source,
        })?;
        let corrupt = |e: png::DecodingError| match e {
            png::DecodingError::IoError(io) if io.kind() != std::io::ErrorKind::UnexpectedEof => Error::Io(io),
            other => Error::Corrupt {
                path: path.to_path_buf(),
                reason: other.to_string(),
            },
        };
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(Transformations::EXPAND);
        let mut reader = decoder.read_info().map_err(corrupt)?;
        let (color, depth) = reader.output_color_type();
        if depth != BitDepth::Eight {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("{depth:?}-bit samples; only 8-bit images are supported"),
            });
        }
        let size = reader.output_buffer_size().ok_or_else(|| Error::Corrupt {
            path: path.to_path_buf(),
            reason: "image too large".into(),
        })?;
        let mut raw = vec![0u8; size];
        let info = reader.next_frame(&mut raw).map_err(corrupt)?;
        raw.truncate(info.buffer_size());
        let (width, height) = (info.width, info.height);
        let data = match color {
            ColorType::Rgb => raw,
            ColorType::Rgba => raw.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            ColorType::Grayscale => raw.iter().flat_map(|&g| [g, g, g]).collect(),
            ColorType::GrayscaleAlpha => raw.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
            ColorType::Indexed => {
                return Err(Error::UnsupportedFormat {
                    path: path.to_path_buf(),
                    reason: "unexpanded palette image".into(),
                })
            }
        };
        Ok(PngSlide {
            inner: InMemorySlide::new(width, height, data),
        })
    }
}

impl SlideSource for PngSlide {
    fn dimensions(&self) -> (u32, u32) {
        self.inner.dimensions()
    }

    fn read_region(&self, x: u32, y: u32, w: u32, h: u32) -> Result<PixelBlock> {
        self.inner.read_region(x, y, w, h)
    }
}

/// Streams rows into an 8-bit RGB PNG.
pub struct PngStripWriter {
    path: PathBuf,
    cursor: RowCursor,
    stream: Option<png::StreamWriter<'static, BufWriter<File>>>,
}

impl PngStripWriter {
    pub fn create(path: impl AsRef<Path>, width: u32, height: u32) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(Error::Write)?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
        encoder.set_color(ColorType::Rgb);
        encoder.set_depth(BitDepth::Eight);
        let stream = encoder
            .write_header()
            .and_then(|w| w.into_stream_writer())
            .map_err(encoding_error)?;
        Ok(PngStripWriter {
            path,
            cursor: RowCursor::new(width, height),
            stream: Some(stream),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn encoding_error(e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::Write(io),
        other => Error::Write(std::io::Error::other(other.to_string())),
    }
}

impl StripSink for PngStripWriter {
    fn dimensions(&self) -> (u32, u32) {
        (self.cursor.width, self.cursor.height)
    }

    fn write_strip(&mut self, block: &PixelBlock) -> Result<()> {
        self.cursor.accept(block)?;
        let stream = self
            .stream
            .as_mut()
            .ok_or_else(|| Error::Write(std::io::Error::other("writer already finished")))?;
        stream.write_all(&block.data).map_err(Error::Write)
    }

    fn finish(&mut self) -> Result<()> {
        self.cursor.complete()?;
        if let Some(stream) = self.stream.take() {
            stream.finish().map_err(encoding_error)?;
        }
        Ok(())
    }
}
