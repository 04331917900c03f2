use std::fs::File;
use std::io::{BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use tiff::decoder::{ChunkType, Decoder, DecodingResult, Limits};
use tiff::tags::{PlanarConfiguration, Tag};
use tiff::{ColorType, TiffError};

use super::{check_region, PixelBlock, RowCursor, SlideSource, StripSink};
use crate::error::{Error, Result};

/// Edge length of output tiles.
pub const DEFAULT_TILE_SIZE: u32 = 256;

/// Random-access reader for tiled or striped 8-bit RGB (Big)TIFF files.
///
/// Only the first image directory is read; for pyramidal slides that is the
/// full-resolution level.
pub struct TiffSlide {
    path: PathBuf,
    width: u32,
    height: u32,
    chunk_width: u32,
    chunk_height: u32,
    chunks_across: u32,
    tiled: bool,
    decoder: Mutex<Decoder<BufReader<File>>>,
}

impl std::fmt::Debug for TiffSlide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TiffSlide")
            .field("path", &self.path)
            .field("width", &self.width)
            .field("height", &self.height)
            .field("chunk", &(self.chunk_width, self.chunk_height))
            .field("tiled", &self.tiled)
            .finish()
    }
}

impl TiffSlide {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|source| Error::Open {
            path: path.clone(),
            source,
        })?;
        let tag_err = |e: TiffError| tiff_error(&path, e);
        let mut decoder = Decoder::new(BufReader::new(file))
            .map_err(tag_err)?
            .with_limits(Limits::unlimited());
        let (width, height) = decoder.dimensions().map_err(tag_err)?;
        let colortype = decoder.colortype().map_err(tag_err)?;
        if colortype != ColorType::RGB(8) {
            return Err(Error::UnsupportedFormat {
                path,
                reason: format!("{colortype:?}; only 8-bit RGB is supported"),
            });
        }
        let planar = decoder
            .find_tag_unsigned::<u16>(Tag::PlanarConfiguration)
            .map_err(tag_err)?
            .unwrap_or(1);
        if planar != PlanarConfiguration::Chunky.to_u16() {
            return Err(Error::UnsupportedFormat {
                path,
                reason: "planar sample layout".into(),
            });
        }
        let (chunk_width, chunk_height) = decoder.chunk_dimensions();
        if chunk_width == 0 || chunk_height == 0 {
            return Err(Error::Corrupt {
                path,
                reason: "zero-sized tiles or strips".into(),
            });
        }
        let tiled = decoder.get_chunk_type() == ChunkType::Tile;
        Ok(TiffSlide {
            width,
            height,
            chunk_width,
            chunk_height,
            chunks_across: width.div_ceil(chunk_width),
            tiled,
            decoder: Mutex::new(decoder),
            path,
        })
    }

    pub fn is_tiled(&self) -> bool {
        self.tiled
    }

    /// Tile (or strip) size in pixels.
    pub fn chunk_dimensions(&self) -> (u32, u32) {
        (self.chunk_width, self.chunk_height)
    }

    fn read_chunk(&self, index: u32) -> Result<(u32, u32, Vec<u8>)> {
        let mut decoder = self.decoder.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
        let (w, h) = decoder.chunk_data_dimensions(index);
        let data = match decoder.read_chunk(index).map_err(|e| tiff_error(&self.path, e))? {
            DecodingResult::U8(v) => v,
            _ => {
                return Err(Error::UnsupportedFormat {
                    path: self.path.clone(),
                    reason: "non 8-bit sample data".into(),
                })
            }
        };
        let needed = w as usize * h as usize * 3;
        if data.len() < needed {
            return Err(Error::Corrupt {
                path: self.path.clone(),
                reason: format!("chunk {index} holds {} bytes, expected {needed}", data.len()),
            });
        }
        Ok((w, h, data))
    }
}

fn tiff_error(path: &Path, err: TiffError) -> Error {
    match err {
        TiffError::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Error::Corrupt {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
        TiffError::IoError(e) => Error::Io(e),
        TiffError::UnsupportedError(e) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
        other => Error::Corrupt {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

impl SlideSource for TiffSlide {
    fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn read_region(&self, x: u32, y: u32, w: u32, h: u32) -> Result<PixelBlock> {
        check_region(x, y, w, h, self.width, self.height)?;
        let mut out = vec![0u8; w as usize * h as usize * 3];
        let out_stride = w as usize * 3;
        let (cw, ch) = (self.chunk_width, self.chunk_height);
        for cy in y / ch..=(y + h - 1) / ch {
            for cx in x / cw..=(x + w - 1) / cw {
                let index = cy * self.chunks_across + cx;
                let (dw, dh, data) = self.read_chunk(index)?;
                let chunk_x0 = cx * cw;
                let chunk_y0 = cy * ch;
                // Overlap of the chunk with the requested region, image coordinates.
                let x0 = x.max(chunk_x0);
                let x1 = (x + w).min(chunk_x0 + dw);
                let y0 = y.max(chunk_y0);
                let y1 = (y + h).min(chunk_y0 + dh);
                if x0 >= x1 || y0 >= y1 {
                    continue;
                }
                let run = (x1 - x0) as usize * 3;
                let chunk_stride = dw as usize * 3;
                for row in y0..y1 {
                    let src = (row - chunk_y0) as usize * chunk_stride + (x0 - chunk_x0) as usize * 3;
                    let dst = (row - y) as usize * out_stride + (x0 - x) as usize * 3;
                    out[dst..dst + run].copy_from_slice(&data[src..src + run]);
                }
            }
        }
        Ok(PixelBlock::new(x, y, w, h, out))
    }
}

const TYPE_SHORT: u16 = 3;
const TYPE_LONG: u16 = 4;
const TYPE_LONG8: u16 = 16;

/// Streams strips into an uncompressed tiled 8-bit RGB TIFF.
///
/// Rows that do not yet complete a row of tiles are held back; strips whose
/// height is a multiple of the tile size are written without buffering.
/// Files whose pixel data would exceed the 4 GiB classic-TIFF limit are
/// written as BigTIFF.
pub struct TiledTiffWriter<W: Write + Seek = BufWriter<File>> {
    out: W,
    cursor: RowCursor,
    tile: u32,
    big: bool,
    pos: u64,
    carry: Vec<u8>,
    carry_rows: u32,
    tile_buf: Vec<u8>,
    offsets: Vec<u64>,
    finished: bool,
}

impl TiledTiffWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, width: u32, height: u32) -> Result<Self> {
        let file = File::create(path.as_ref()).map_err(Error::Write)?;
        TiledTiffWriter::new(BufWriter::with_capacity(1 << 20, file), width, height, DEFAULT_TILE_SIZE, None)
    }
}

impl<W: Write + Seek> TiledTiffWriter<W> {
    /// `bigtiff: None` chooses BigTIFF only when the classic format cannot
    /// address the data.
    pub fn new(mut out: W, width: u32, height: u32, tile: u32, bigtiff: Option<bool>) -> Result<Self> {
        if width == 0 || height == 0 || tile == 0 || tile % 16 != 0 {
            return Err(Error::InvalidConfig(format!(
                "tiled TIFF needs positive dimensions and a tile size that is a multiple of 16 (got {width}x{height}, tile {tile})"
            )));
        }
        let tiles = width.div_ceil(tile) as u64 * height.div_ceil(tile) as u64;
        let payload = tiles * tile as u64 * tile as u64 * 3;
        let big = bigtiff.unwrap_or(payload + tiles * 16 + 4096 > u32::MAX as u64);
        let header: Vec<u8> = if big {
            let mut h = b"II".to_vec();
            h.extend_from_slice(&43u16.to_le_bytes());
            h.extend_from_slice(&8u16.to_le_bytes());
            h.extend_from_slice(&0u16.to_le_bytes());
            h.extend_from_slice(&0u64.to_le_bytes());
            h
        } else {
            let mut h = b"II".to_vec();
            h.extend_from_slice(&42u16.to_le_bytes());
            h.extend_from_slice(&0u32.to_le_bytes());
            h
        };
        out.write_all(&header).map_err(Error::Write)?;
        Ok(TiledTiffWriter {
            out,
            cursor: RowCursor::new(width, height),
            tile,
            big,
            pos: header.len() as u64,
            carry: Vec::new(),
            carry_rows: 0,
            tile_buf: vec![0; tile as usize * tile as usize * 3],
            offsets: Vec::with_capacity(tiles as usize),
            finished: false,
        })
    }

    pub fn is_bigtiff(&self) -> bool {
        self.big
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn write_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        self.out.write_all(bytes).map_err(Error::Write)?;
        self.pos += bytes.len() as u64;
        Ok(())
    }

    /// Emit one row of tiles from `rows` consecutive image rows (`rows <= tile`).
    fn emit_tile_row(&mut self, src: TileRows<'_>) -> Result<()> {
        let width = self.cursor.width as usize;
        let tile = self.tile as usize;
        let across = width.div_ceil(tile);
        let mut buf = std::mem::take(&mut self.tile_buf);
        for tx in 0..across {
            let x0 = tx * tile;
            let run = (width - x0).min(tile) * 3;
            buf.fill(0);
            for r in 0..src.rows() {
                let row = src.row(r, width);
                buf[r * tile * 3..r * tile * 3 + run].copy_from_slice(&row[x0 * 3..x0 * 3 + run]);
            }
            self.offsets.push(self.pos);
            self.write_bytes(&buf)?;
        }
        self.tile_buf = buf;
        Ok(())
    }

    fn write_entries(&mut self, entries: &mut [(u16, u16, u64, Vec<u8>)]) -> Result<u64> {
        let inline = if self.big { 8 } else { 4 };
        // Out-of-line values first.
        let mut fields = Vec::with_capacity(entries.len());
        for (tag, ty, count, bytes) in entries.iter_mut() {
            if bytes.len() > inline {
                if self.pos % 2 == 1 {
                    self.write_bytes(&[0])?;
                }
                let at = self.pos;
                let data = std::mem::take(bytes);
                self.write_bytes(&data)?;
                let mut field = if self.big {
                    at.to_le_bytes().to_vec()
                } else {
                    (at as u32).to_le_bytes().to_vec()
                };
                field.resize(inline, 0);
                fields.push((*tag, *ty, *count, field));
            } else {
                let mut field = bytes.clone();
                field.resize(inline, 0);
                fields.push((*tag, *ty, *count, field));
            }
        }
        if self.pos % 2 == 1 {
            self.write_bytes(&[0])?;
        }
        let ifd = self.pos;
        let mut dir = Vec::new();
        if self.big {
            dir.extend_from_slice(&(fields.len() as u64).to_le_bytes());
        } else {
            dir.extend_from_slice(&(fields.len() as u16).to_le_bytes());
        }
        for (tag, ty, count, field) in fields {
            dir.extend_from_slice(&tag.to_le_bytes());
            dir.extend_from_slice(&ty.to_le_bytes());
            if self.big {
                dir.extend_from_slice(&count.to_le_bytes());
            } else {
                dir.extend_from_slice(&(count as u32).to_le_bytes());
            }
            dir.extend_from_slice(&field);
        }
        if self.big {
            dir.extend_from_slice(&0u64.to_le_bytes());
        } else {
            dir.extend_from_slice(&0u32.to_le_bytes());
        }
        self.write_bytes(&dir)?;
        Ok(ifd)
    }
}

/// Image rows for one row of tiles: held-back rows followed by fresh ones.
struct TileRows<'a> {
    carry: &'a [u8],
    carry_rows: usize,
    block: &'a [u8],
    block_rows: usize,
}

impl TileRows<'_> {
    fn rows(&self) -> usize {
        self.carry_rows + self.block_rows
    }

    fn row(&self, r: usize, width: usize) -> &[u8] {
        let stride = width * 3;
        if r < self.carry_rows {
            &self.carry[r * stride..(r + 1) * stride]
        } else {
            let r = r - self.carry_rows;
            &self.block[r * stride..(r + 1) * stride]
        }
    }
}

fn u32s(values: &[u32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn u16s(values: &[u16]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl<W: Write + Seek> StripSink for TiledTiffWriter<W> {
    fn dimensions(&self) -> (u32, u32) {
        (self.cursor.width, self.cursor.height)
    }

    fn write_strip(&mut self, block: &PixelBlock) -> Result<()> {
        self.cursor.accept(block)?;
        let stride = block.width as usize * 3;
        let tile = self.tile as usize;
        let mut consumed = 0usize;
        let total = block.height as usize;
        let at_end = self.cursor.next_row == self.cursor.height;

        while consumed < total {
            let need = tile - self.carry_rows as usize;
            let available = total - consumed;
            if available < need && !at_end {
                break;
            }
            let take = need.min(available);
            let carry = std::mem::take(&mut self.carry);
            let rows = TileRows {
                carry: &carry,
                carry_rows: self.carry_rows as usize,
                block: &block.data[consumed * stride..(consumed + take) * stride],
                block_rows: take,
            };
            self.emit_tile_row(rows)?;
            self.carry = carry;
            self.carry.clear();
            self.carry_rows = 0;
            consumed += take;
        }
        if consumed < total {
            self.carry.extend_from_slice(&block.data[consumed * stride..]);
            self.carry_rows += (total - consumed) as u32;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        if self.finished {
            return Ok(());
        }
        self.cursor.complete()?;
        debug_assert_eq!(self.carry_rows, 0);
        let tile_bytes = self.tile as u64 * self.tile as u64 * 3;
        let n = self.offsets.len() as u64;
        let (offsets, counts, ptr_type) = if self.big {
            (
                self.offsets.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>(),
                self.offsets.iter().flat_map(|_| tile_bytes.to_le_bytes()).collect::<Vec<u8>>(),
                TYPE_LONG8,
            )
        } else {
            let offs: Vec<u32> = self.offsets.iter().map(|&v| v as u32).collect();
            (u32s(&offs), u32s(&vec![tile_bytes as u32; n as usize]), TYPE_LONG)
        };
        let mut entries = vec![
            (256u16, TYPE_LONG, 1u64, u32s(&[self.cursor.width])),
            (257, TYPE_LONG, 1, u32s(&[self.cursor.height])),
            (258, TYPE_SHORT, 3, u16s(&[8, 8, 8])),
            (259, TYPE_SHORT, 1, u16s(&[1])),
            (262, TYPE_SHORT, 1, u16s(&[2])),
            (277, TYPE_SHORT, 1, u16s(&[3])),
            (284, TYPE_SHORT, 1, u16s(&[1])),
            (322, TYPE_LONG, 1, u32s(&[self.tile])),
            (323, TYPE_LONG, 1, u32s(&[self.tile])),
            (324, ptr_type, n, offsets),
            (325, ptr_type, n, counts),
        ];
        let ifd = self.write_entries(&mut entries)?;
        let (at, bytes) = if self.big {
            (8, ifd.to_le_bytes().to_vec())
        } else {
            (4, (ifd as u32).to_le_bytes().to_vec())
        };
        let io = |e| Error::Write(e);
        self.out.seek(SeekFrom::Start(at)).map_err(io)?;
        self.out.write_all(&bytes).map_err(io)?;
        self.out.seek(SeekFrom::End(0)).map_err(io)?;
        self.out.flush().map_err(io)?;
        self.finished = true;
        Ok(())
    }

    fn buffered_pixels(&self) -> usize {
        self.carry_rows as usize * self.cursor.width as usize
    }
}
