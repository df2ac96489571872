//! Binary persistence for sample streams.
//!
//! Layout: ASCII magic `MACS`, a format version byte, then six little-endian
//! u32 header words (`x_size`, `y_size`, `field_count`, retained sample
//! count `S`, `burn_in`, thin interval `d`) and the 64-bit chain seed.
//! `S + 1` frames follow, the initial state first. Each frame packs the
//! cells in `(x record, y record, field)` row-major order at two bits per
//! cell — `00` missing, `01` agree, `10` disagree — filling each byte from
//! its least-significant bit pair upward and zero-padding the final byte.
//! A 59 x 400 x 6 state therefore occupies exactly 35,400 bytes per frame.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::kernel::SampleStream;
use crate::model::Ternary;

pub const MAGIC: [u8; 4] = *b"MACS";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {found:02x?}, expected {MAGIC:02x?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}")]
    BadVersion(u8),
    #[error("header describes an empty stream ({what} = 0)")]
    EmptyDimension { what: &'static str },
    #[error("header is inconsistent: burn_in {burn_in} >= sample count {samples}")]
    BadBurnIn { burn_in: u32, samples: u32 },
    #[error("file truncated inside frame {frame}")]
    TruncatedFrame { frame: usize },
    #[error("invalid cell code 0b11 in frame {frame} at cell {cell}")]
    BadCellCode { frame: usize, cell: usize },
    #[error("frame {frame} holds {len} cells, expected {expected}")]
    FrameLength { frame: usize, len: usize, expected: usize },
    #[error("stream shape {got:?} does not match the writer's header {expected:?}")]
    ShapeMismatch { got: (usize, usize, usize), expected: (usize, usize, usize) },
    #[error("writer closed after {written} frames, header promised {expected}")]
    FrameCount { written: usize, expected: usize },
}

/// Bytes needed for one packed frame of `cell_count` cells.
pub fn frame_len(cell_count: usize) -> usize {
    cell_count.div_ceil(4)
}

fn cell_bits(cell: Ternary) -> u8 {
    match cell {
        Ternary::Missing => 0b00,
        Ternary::Agree => 0b01,
        Ternary::Disagree => 0b10,
    }
}

/// Packs a state into `out` (cleared first) at two bits per cell,
/// least-significant bit pair first.
pub fn pack_frame(cells: &[Ternary], out: &mut Vec<u8>) {
    out.clear();
    out.resize(frame_len(cells.len()), 0);
    for (k, &cell) in cells.iter().enumerate() {
        out[k / 4] |= cell_bits(cell) << ((k % 4) * 2);
    }
}

/// Unpacks `cell_count` cells from a packed frame.
pub fn unpack_frame(
    bytes: &[u8],
    cell_count: usize,
    frame: usize,
) -> Result<Vec<Ternary>, StoreError> {
    if bytes.len() != frame_len(cell_count) {
        return Err(StoreError::FrameLength { frame, len: bytes.len() * 4, expected: cell_count });
    }
    let mut cells = Vec::with_capacity(cell_count);
    for k in 0..cell_count {
        let bits = (bytes[k / 4] >> ((k % 4) * 2)) & 0b11;
        let cell = match bits {
            0b00 => Ternary::Missing,
            0b01 => Ternary::Agree,
            0b10 => Ternary::Disagree,
            _ => return Err(StoreError::BadCellCode { frame, cell: k }),
        };
        cells.push(cell);
    }
    Ok(cells)
}

/// Stream header written ahead of the frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub x_size: u32,
    pub y_size: u32,
    pub field_count: u32,
    pub samples: u32,
    pub burn_in: u32,
    pub thin: u32,
    pub seed: u64,
}

impl StreamHeader {
    pub fn cell_count(&self) -> usize {
        self.x_size as usize * self.y_size as usize * self.field_count as usize
    }

    fn validate(&self) -> Result<(), StoreError> {
        for (what, v) in [
            ("x_size", self.x_size),
            ("y_size", self.y_size),
            ("field_count", self.field_count),
            ("samples", self.samples),
            ("thin", self.thin),
        ] {
            if v == 0 {
                return Err(StoreError::EmptyDimension { what });
            }
        }
        if self.burn_in >= self.samples {
            return Err(StoreError::BadBurnIn { burn_in: self.burn_in, samples: self.samples });
        }
        Ok(())
    }

    fn write_to(&self, w: &mut impl Write) -> Result<(), StoreError> {
        w.write_all(&MAGIC)?;
        w.write_all(&[FORMAT_VERSION])?;
        for v in [self.x_size, self.y_size, self.field_count, self.samples, self.burn_in, self.thin]
        {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        Ok(())
    }

    fn read_from(r: &mut impl Read) -> Result<Self, StoreError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(StoreError::BadMagic { found: magic });
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != FORMAT_VERSION {
            return Err(StoreError::BadVersion(version[0]));
        }
        let mut words = [0u32; 6];
        for w in &mut words {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)?;
            *w = u32::from_le_bytes(buf);
        }
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed)?;
        let header = StreamHeader {
            x_size: words[0],
            y_size: words[1],
            field_count: words[2],
            samples: words[3],
            burn_in: words[4],
            thin: words[5],
            seed: u64::from_le_bytes(seed),
        };
        header.validate()?;
        Ok(header)
    }
}

/// Incremental writer: header first, then the initial state, then each
/// retained sample as it is produced.
pub struct SampleWriter<W: Write> {
    sink: W,
    header: StreamHeader,
    frames_written: usize,
    buf: Vec<u8>,
}

impl SampleWriter<BufWriter<File>> {
    pub fn create(path: &Path, header: StreamHeader) -> Result<Self, StoreError> {
        SampleWriter::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> SampleWriter<W> {
    pub fn new(mut sink: W, header: StreamHeader) -> Result<Self, StoreError> {
        header.validate()?;
        header.write_to(&mut sink)?;
        Ok(SampleWriter { sink, header, frames_written: 0, buf: Vec::new() })
    }

    /// Appends one state; the first call must be the initial matrix.
    pub fn write_state(&mut self, cells: &[Ternary]) -> Result<(), StoreError> {
        if cells.len() != self.header.cell_count() {
            return Err(StoreError::FrameLength {
                frame: self.frames_written,
                len: cells.len(),
                expected: self.header.cell_count(),
            });
        }
        pack_frame(cells, &mut self.buf);
        self.sink.write_all(&self.buf)?;
        self.frames_written += 1;
        Ok(())
    }

    /// Flushes and checks that exactly `samples + 1` frames were written.
    pub fn finish(mut self) -> Result<(), StoreError> {
        let expected = self.header.samples as usize + 1;
        if self.frames_written != expected {
            return Err(StoreError::FrameCount { written: self.frames_written, expected });
        }
        self.sink.flush()?;
        Ok(())
    }
}

/// Writes a materialised stream to `path`.
pub fn save_samples(stream: &SampleStream, path: &Path) -> Result<(), StoreError> {
    let header = StreamHeader {
        x_size: stream.x_size as u32,
        y_size: stream.y_size as u32,
        field_count: stream.field_count as u32,
        samples: stream.sample_count() as u32,
        burn_in: stream.burn_in as u32,
        thin: stream.thin as u32,
        seed: stream.seed,
    };
    let mut writer = SampleWriter::create(path, header)?;
    writer.write_state(stream.initial())?;
    for sample in stream.samples() {
        writer.write_state(sample)?;
    }
    writer.finish()
}

/// Reads a stream back, validating magic, version, header consistency and
/// every frame.
pub fn load_samples(path: &Path) -> Result<SampleStream, StoreError> {
    let mut reader = BufReader::new(File::open(path)?);
    let header = StreamHeader::read_from(&mut reader)?;
    let cell_count = header.cell_count();
    let frame_bytes = frame_len(cell_count);
    let mut states = Vec::with_capacity(header.samples as usize + 1);
    let mut buf = vec![0u8; frame_bytes];
    for frame in 0..=(header.samples as usize) {
        reader
            .read_exact(&mut buf)
            .map_err(|_| StoreError::TruncatedFrame { frame })?;
        states.push(unpack_frame(&buf, cell_count, frame)?);
    }
    SampleStream::from_states(
        header.x_size as usize,
        header.y_size as usize,
        header.field_count as usize,
        header.thin as u64,
        header.burn_in as u64,
        header.seed,
        states,
    )
    .map_err(|_| StoreError::FrameLength { frame: 0, len: 0, expected: cell_count })
}
