//! Raw 8-bit planar YUV 4:2:0 file reader/writer. Frames are reflection-
//! padded to the pipeline alignment on ingest; the original geometry rides
//! along for cropping on output.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::VideoError;
use crate::frame::{Frame, Plane, Sequence};

/// Padded dimensions are multiples of 16 so the half-resolution tier keeps
/// 8x8 transform blocks and the feature pyramids divide cleanly.
pub const ALIGN: usize = 16;

fn io_err(path: &Path, source: std::io::Error) -> VideoError {
    VideoError::Io { path: path.display().to_string(), source }
}

/// Read `count` frames of `width x height` 4:2:0 video. `count = 0` means
/// read to end of file.
pub fn load_yuv(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    count: usize,
) -> Result<Sequence, VideoError> {
    let path = path.as_ref();
    if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
        return Err(VideoError::BadDimensions { width, height });
    }
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let frame_bytes = width * height * 3 / 2;
    let pad_w = width.div_ceil(ALIGN) * ALIGN;
    let pad_h = height.div_ceil(ALIGN) * ALIGN;

    let mut frames = Vec::new();
    let mut buf = vec![0u8; frame_bytes];
    let mut index = 0usize;
    loop {
        if count > 0 && index == count {
            break;
        }
        let mut got = 0usize;
        while got < frame_bytes {
            match reader.read(&mut buf[got..]).map_err(|e| io_err(path, e))? {
                0 => break,
                n => got += n,
            }
        }
        if got == 0 && count == 0 {
            break;
        }
        if got < frame_bytes {
            return Err(VideoError::ShortRead { frame: index, needed: frame_bytes, got });
        }
        let (cw, ch) = (width / 2, height / 2);
        let y = Plane::new(width, height, buf[..width * height].to_vec())?;
        let u = Plane::new(cw, ch, buf[width * height..width * height + cw * ch].to_vec())?;
        let v = Plane::new(cw, ch, buf[width * height + cw * ch..].to_vec())?;
        frames.push(Frame::new(y, u, v)?.pad_to(pad_w, pad_h));
        index += 1;
    }
    Ok(Sequence { frames, fps: 30.0, orig_width: width, orig_height: height })
}

/// Write frames as raw planar 4:2:0. Frames are written at their current
/// dimensions; crop before writing if original geometry is wanted.
pub fn write_yuv(path: impl AsRef<Path>, frames: &[Frame]) -> Result<(), VideoError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    for f in frames {
        writer.write_all(&f.y.data).map_err(|e| io_err(path, e))?;
        writer.write_all(&f.u.data).map_err(|e| io_err(path, e))?;
        writer.write_all(&f.v.data).map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}
