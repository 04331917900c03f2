//! Random-access slide reading, row-strip planning and streamed writing.
//!
//! Every input format sits behind [`SlideSource`]; every output format sits
//! behind [`StripSink`]. Strips are full-width horizontal bands, which match
//! the row-major on-disk layout of both PNG and TIFF.

mod png;
mod tiff;

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

pub use self::png::{PngSlide, PngStripWriter};
pub use self::tiff::{TiffSlide, TiledTiffWriter, DEFAULT_TILE_SIZE};

/// Default number of rows per strip.
pub const DEFAULT_STRIP_HEIGHT: u32 = 1024;

/// A rectangle of 8-bit RGB pixels and its position in the slide.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelBlock {
    pub origin_x: u32,
    pub origin_y: u32,
    pub width: u32,
    pub height: u32,
    /// Row-major interleaved RGB, `width * height * 3` bytes.
    pub data: Vec<u8>,
}

impl PixelBlock {
    pub fn new(origin_x: u32, origin_y: u32, width: u32, height: u32, data: Vec<u8>) -> Self {
        assert_eq!(
            data.len(),
            width as usize * height as usize * 3,
            "pixel buffer does not match block shape"
        );
        PixelBlock {
            origin_x,
            origin_y,
            width,
            height,
            data,
        }
    }

    pub fn filled(origin_x: u32, origin_y: u32, width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let data = rgb.iter().copied().cycle().take(n * 3).collect();
        PixelBlock::new(origin_x, origin_y, width, height, data)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Copy of the sub-rectangle at block-relative `(x, y)`.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<PixelBlock> {
        check_region(x, y, w, h, self.width, self.height)?;
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        let stride = self.width as usize * 3;
        for row in y..y + h {
            let start = row as usize * stride + x as usize * 3;
            data.extend_from_slice(&self.data[start..start + w as usize * 3]);
        }
        Ok(PixelBlock::new(self.origin_x + x, self.origin_y + y, w, h, data))
    }
}

pub(crate) fn check_region(x: u32, y: u32, w: u32, h: u32, width: u32, height: u32) -> Result<()> {
    let fits = w > 0
        && h > 0
        && (x as u64 + w as u64) <= width as u64
        && (y as u64 + h as u64) <= height as u64;
    if fits {
        Ok(())
    } else {
        Err(Error::OutOfBounds {
            x,
            y,
            w,
            h,
            width,
            height,
        })
    }
}

/// A readable slide. Implementations must allow concurrent region reads and
/// return identical bytes for repeated reads of the same region.
pub trait SlideSource: Send + Sync {
    fn dimensions(&self) -> (u32, u32);

    /// Exactly `w * h` pixels starting at `(x, y)`; out-of-bounds requests fail.
    fn read_region(&self, x: u32, y: u32, w: u32, h: u32) -> Result<PixelBlock>;

    fn width(&self) -> u32 {
        self.dimensions().0
    }

    fn height(&self) -> u32 {
        self.dimensions().1
    }
}

/// A slide held entirely in memory.
#[derive(Debug, Clone)]
pub struct InMemorySlide {
    image: PixelBlock,
}

impl InMemorySlide {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Self {
        InMemorySlide {
            image: PixelBlock::new(0, 0, width, height, data),
        }
    }

    pub fn from_block(block: PixelBlock) -> Self {
        InMemorySlide {
            image: PixelBlock { origin_x: 0, origin_y: 0, ..block },
        }
    }

    pub fn as_block(&self) -> &PixelBlock {
        &self.image
    }

    pub fn into_block(self) -> PixelBlock {
        self.image
    }
}

impl SlideSource for InMemorySlide {
    fn dimensions(&self) -> (u32, u32) {
        (self.image.width, self.image.height)
    }

    fn read_region(&self, x: u32, y: u32, w: u32, h: u32) -> Result<PixelBlock> {
        self.image.crop(x, y, w, h)
    }
}

impl<S: SlideSource + ?Sized> SlideSource for &S {
    fn dimensions(&self) -> (u32, u32) {
        (**self).dimensions()
    }

    fn read_region(&self, x: u32, y: u32, w: u32, h: u32) -> Result<PixelBlock> {
        (**self).read_region(x, y, w, h)
    }
}

impl<S: SlideSource + ?Sized> SlideSource for Box<S> {
    fn dimensions(&self) -> (u32, u32) {
        (**self).dimensions()
    }

    fn read_region(&self, x: u32, y: u32, w: u32, h: u32) -> Result<PixelBlock> {
        (**self).read_region(x, y, w, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Png,
    Tiff,
}

fn sniff(path: &Path) -> Result<Format> {
    let mut file = File::open(path).map_err(|source| Error::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut magic = [0u8; 8];
    let mut n = 0;
    while n < magic.len() {
        match file.read(&mut magic[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(Error::Io(e)),
        }
    }
    let magic = &magic[..n];
    if magic.starts_with(b"\x89PNG\r\n\x1a\n") {
        return Ok(Format::Png);
    }
    let is_tiff = [b"II*\0", b"MM\0*", b"II+\0", b"MM\0+"]
        .iter()
        .any(|m| magic.starts_with(&m[..]));
    if is_tiff {
        return Ok(Format::Tiff);
    }
    Err(Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: "not a PNG or TIFF file".into(),
    })
}

/// Open an image file as a [`SlideSource`], detecting the format from its
/// leading bytes. Pyramidal TIFFs expose their first (full-resolution) level.
pub fn open_slide(path: impl AsRef<Path>) -> Result<Box<dyn SlideSource>> {
    let path = path.as_ref();
    match sniff(path)? {
        Format::Png => Ok(Box::new(PngSlide::open(path)?)),
        Format::Tiff => Ok(Box::new(TiffSlide::open(path)?)),
    }
}

/// An ordered run of full-width strips covering `[0, height)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StripPlan {
    pub strip_height: u32,
    /// `(origin_y, height)` pairs, top to bottom.
    pub strips: Vec<(u32, u32)>,
}

impl StripPlan {
    pub fn len(&self) -> usize {
        self.strips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strips.is_empty()
    }
}

pub fn plan_strips(height: u32, strip_height: u32) -> Result<StripPlan> {
    if height == 0 || strip_height == 0 {
        return Err(Error::InvalidConfig(format!(
            "strip planning needs positive sizes (height {height}, strip height {strip_height})"
        )));
    }
    let strips = (0..height)
        .step_by(strip_height as usize)
        .map(|y| (y, strip_height.min(height - y)))
        .collect();
    Ok(StripPlan {
        strip_height,
        strips,
    })
}

/// Destination for strips presented top to bottom.
pub trait StripSink {
    fn dimensions(&self) -> (u32, u32);

    fn write_strip(&mut self, block: &PixelBlock) -> Result<()>;

    /// Flush trailing data. Fails if not every row was written.
    fn finish(&mut self) -> Result<()>;

    /// Pixels the sink is holding back while waiting for more rows.
    fn buffered_pixels(&self) -> usize {
        0
    }
}

/// Tracks the next expected row of an output image.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RowCursor {
    pub width: u32,
    pub height: u32,
    pub next_row: u32,
}

impl RowCursor {
    pub fn new(width: u32, height: u32) -> Self {
        RowCursor {
            width,
            height,
            next_row: 0,
        }
    }

    pub fn accept(&mut self, block: &PixelBlock) -> Result<()> {
        if block.origin_y != self.next_row {
            return Err(Error::StripOrder {
                expected: self.next_row,
                got: block.origin_y,
            });
        }
        let remaining = self.height - self.next_row;
        if block.origin_x != 0 || block.width != self.width || block.height == 0 || block.height > remaining {
            return Err(Error::StripShape {
                got_width: block.width,
                got_height: block.height,
                width: self.width,
                remaining,
            });
        }
        self.next_row += block.height;
        Ok(())
    }

    pub fn complete(&self) -> Result<()> {
        if self.next_row == self.height {
            Ok(())
        } else {
            Err(Error::IncompleteOutput {
                written: self.next_row,
                height: self.height,
            })
        }
    }
}

/// Collects strips into an in-memory image.
#[derive(Debug)]
pub struct MemorySink {
    cursor: RowCursor,
    data: Vec<u8>,
}

impl MemorySink {
    pub fn new(width: u32, height: u32) -> Self {
        MemorySink {
            cursor: RowCursor::new(width, height),
            data: Vec::with_capacity(width as usize * height as usize * 3),
        }
    }

    pub fn into_block(self) -> Result<PixelBlock> {
        self.cursor.complete()?;
        Ok(PixelBlock::new(0, 0, self.cursor.width, self.cursor.height, self.data))
    }
}

impl StripSink for MemorySink {
    fn dimensions(&self) -> (u32, u32) {
        (self.cursor.width, self.cursor.height)
    }

    fn write_strip(&mut self, block: &PixelBlock) -> Result<()> {
        self.cursor.accept(block)?;
        self.data.extend_from_slice(&block.data);
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.cursor.complete()
    }
}

/// Accepts strips in order and discards them.
#[derive(Debug)]
pub struct NullSink {
    cursor: RowCursor,
}

impl NullSink {
    pub fn new(width: u32, height: u32) -> Self {
        NullSink {
            cursor: RowCursor::new(width, height),
        }
    }
}

impl StripSink for NullSink {
    fn dimensions(&self) -> (u32, u32) {
        (self.cursor.width, self.cursor.height)
    }

    fn write_strip(&mut self, block: &PixelBlock) -> Result<()> {
        self.cursor.accept(block)
    }

    fn finish(&mut self) -> Result<()> {
        self.cursor.complete()
    }
}

/// Create an output writer chosen by extension: `.png`, or `.tif`/`.tiff`
/// for a tiled TIFF.
pub fn create_sink(path: impl AsRef<Path>, width: u32, height: u32) -> Result<Box<dyn StripSink>> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => Ok(Box::new(PngStripWriter::create(path, width, height)?)),
        Some("tif") | Some("tiff") => Ok(Box::new(TiledTiffWriter::create(path, width, height)?)),
        _ => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "output extension must be .png, .tif or .tiff".into(),
        }),
    }
}

/// Read a whole slide into memory, strip by strip.
pub fn read_all(slide: &dyn SlideSource, strip_height: u32) -> Result<PixelBlock> {
    let (width, height) = slide.dimensions();
    let mut sink = MemorySink::new(width, height);
    for (y, h) in plan_strips(height, strip_height)?.strips {
        sink.write_strip(&slide.read_region(0, y, width, h)?)?;
    }
    sink.into_block()
}

/// Stream a slide into a sink strip by strip.
pub fn copy_slide(slide: &dyn SlideSource, sink: &mut dyn StripSink, strip_height: u32) -> Result<()> {
    let width = slide.width();
    for (y, h) in plan_strips(slide.height(), strip_height)?.strips {
        sink.write_strip(&slide.read_region(0, y, width, h)?)?;
    }
    sink.finish()
}
