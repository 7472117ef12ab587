//! On-disk formats for heatmap sequences and landmark tracks.
//!
//! `.hms` layout (little-endian): the magic bytes `HMS1`, then `u32` frame
//! count `T`, `u32` channels `K`, `u32` height `H`, `u32` width `W`, followed by
//! `T*K*H*W` `f32` values ordered frame-major, then channel-major, then row-major.
//!
//! Landmark CSV: header `frame,landmark,x,y`, 0-based indices, one row per
//! landmark per frame.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{HeatmapStack, LandmarkSet, Point2};
use crate::error::{Error, Result};

pub const HMS_MAGIC: &[u8; 4] = b"HMS1";

pub fn write_hms<W: Write>(mut out: W, frames: &[HeatmapStack]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Empty("cannot write an empty heatmap sequence".into()))?;
    if let Some(bad) = frames.iter().find(|f| !f.same_shape(first)) {
        return Err(Error::shape(first.shape_string(), bad.shape_string()));
    }
    out.write_all(HMS_MAGIC)?;
    for dim in [frames.len(), first.landmarks(), first.height(), first.width()] {
        let dim = u32::try_from(dim).map_err(|_| Error::shape("dimension below 2^32", dim))?;
        out.write_all(&dim.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(frames.len() * first.landmarks() * first.height() * first.width() * 4);
    for frame in frames {
        for map in frame.maps() {
            for &v in map.values() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_hms<R: Read>(mut input: R) -> Result<Vec<HeatmapStack>> {
    let bad = |message: String| Error::Format {
        format: "hms",
        message,
    };
    let mut header = [0u8; 20];
    input
        .read_exact(&mut header)
        .map_err(|e| bad(format!("truncated header: {e}")))?;
    if &header[..4] != HMS_MAGIC {
        return Err(bad("missing HMS1 magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (frames, landmarks, height, width) = (dim(0), dim(1), dim(2), dim(3));
    if frames == 0 || landmarks == 0 {
        return Err(bad(format!("empty dimensions T={frames} K={landmarks}")));
    }
    let count = frames
        .checked_mul(landmarks)
        .and_then(|n| n.checked_mul(height))
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| bad("dimension overflow".into()))?;
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != count * 4 {
        return Err(bad(format!("expected {} payload bytes, found {}", count * 4, raw.len())));
    }
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let per_frame = landmarks * height * width;
    values
        .chunks_exact(per_frame)
        .map(|chunk| HeatmapStack::from_flat(landmarks, height, width, chunk))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct LandmarkRow {
    frame: usize,
    landmark: usize,
    x: f64,
    y: f64,
}

pub fn write_landmarks_csv<W: Write>(out: W, frames: &[LandmarkSet]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for (frame, set) in frames.iter().enumerate() {
        for (landmark, p) in set.points.iter().enumerate() {
            writer.serialize(LandmarkRow {
                frame,
                landmark,
                x: p.x,
                y: p.y,
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn read_landmarks_csv<R: Read>(input: R) -> Result<Vec<LandmarkSet>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["frame", "landmark", "x", "y"] {
        return Err(Error::Format {
            format: "landmark csv",
            message: format!("unexpected header {:?}", headers),
        });
    }
    let mut frames: Vec<Vec<Point2>> = Vec::new();
    for row in reader.deserialize() {
        let row: LandmarkRow = row?;
        if row.frame == frames.len() {
            frames.push(Vec::new());
        }
        let current = frames.get_mut(row.frame).filter(|f| f.len() == row.landmark);
        let Some(points) = current else {
            return Err(Error::Format {
                format: "landmark csv",
                message: format!("rows out of order at frame {}, landmark {}", row.frame, row.landmark),
            });
        };
        points.push(Point2::new(row.x, row.y));
    }
    frames.into_iter().map(LandmarkSet::new).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::make_gaussian_heatmap;
    use proptest::prelude::*;

    #[test]
    fn hms_header_layout() {
        let lm = LandmarkSet::from(vec![Point2::new(1.0, 2.0), Point2::new(3.0, 1.0)]);
        let stack = make_gaussian_heatmap(&lm, 4, 5, 1.0).unwrap();
        let mut buf = Vec::new();
        write_hms(&mut buf, &[stack.clone(), stack.clone(), stack]).unwrap();
        assert_eq!(&buf[..4], b"HMS1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 5);
        assert_eq!(buf.len(), 20 + 3 * 2 * 4 * 5 * 4);
        // First payload value: frame 0, channel 0, row 0, col 0.
        let first = f32::from_le_bytes(buf[20..24].try_into().unwrap());
        assert_eq!(first, (-(1.0f64 + 4.0) / 2.0).exp() as f32);
    }

    #[test]
    fn hms_rejects_corruption() {
        assert!(read_hms(&b"HMS2\0\0\0\0"[..]).is_err());
        let lm = LandmarkSet::from(vec![Point2::new(1.0, 1.0)]);
        let stack = make_gaussian_heatmap(&lm, 3, 3, 1.0).unwrap();
        let mut buf = Vec::new();
        write_hms(&mut buf, &[stack]).unwrap();
        buf.pop();
        assert!(matches!(read_hms(&buf[..]), Err(Error::Format { .. })));
    }

    #[test]
    fn csv_header_and_rows() {
        let frames = vec![
            LandmarkSet::from(vec![Point2::new(1.5, 2.25), Point2::new(0.0, 3.0)]),
            LandmarkSet::from(vec![Point2::new(1.75, 2.0), Point2::new(0.5, 3.5)]),
        ];
        let mut buf = Vec::new();
        write_landmarks_csv(&mut buf, &frames).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("frame,landmark,x,y\n0,0,1.5,2.25\n"));
        assert_eq!(read_landmarks_csv(&buf[..]).unwrap(), frames);
    }

    proptest! {
        #[test]
        fn hms_round_trips_f32_values(vals in proptest::collection::vec(-10.0f32..10.0, 2 * 3 * 4 * 3)) {
            let values: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
            let frames: Vec<HeatmapStack> = values
                .chunks(3 * 4 * 3)
                .map(|c| HeatmapStack::from_flat(3, 4, 3, c).unwrap())
                .collect();
            let mut buf = Vec::new();
            write_hms(&mut buf, &frames).unwrap();
            prop_assert_eq!(read_hms(&buf[..]).unwrap(), frames);
        }

        #[test]
        fn csv_round_trips_exactly(xs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..6)) {
            let set = LandmarkSet::from(xs.iter().map(|&(x, y)| Point2::new(x, y)).collect::<Vec<_>>());
            let frames = vec![set.clone(), set];
            let mut buf = Vec::new();
            write_landmarks_csv(&mut buf, &frames).unwrap();
            prop_assert_eq!(read_landmarks_csv(&buf[..]).unwrap(), frames);
        }
    }
}
