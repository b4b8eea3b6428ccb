//! Dataset serialization.
//!
//! Binary layout (little-endian): magic "PGNV", u32 version=1, u32 n_seq,
//! u32 T, u32 H, u32 W, u32 channels, u32 dtype (0 = f32), a 64-byte
//! free-form generator-constants block, then frames as f32.
//!
//! When latents are present a CSV sidecar with header
//! `seq,theta0,omega,z1,z2,z3,z4` is written next to the dataset file.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{PgnError, Result};

use super::{LatentRecord, VideoDataset};

const MAGIC: &[u8; 4] = b"PGNV";
const VERSION: u32 = 1;

/// Sidecar path: `x.pgnv` → `x.latents.csv`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("latents.csv")
}

pub fn write_dataset(path: &Path, ds: &VideoDataset) -> Result<()> {
    ds.validate()?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    for v in [
        VERSION,
        ds.n_seq as u32,
        ds.t as u32,
        ds.h as u32,
        ds.w as u32,
        ds.channels as u32,
        0u32, // dtype f32
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&ds.constants)?;
    for &f in &ds.frames {
        w.write_all(&f.to_le_bytes())?;
    }
    w.flush()?;
    if let Some(latents) = &ds.latents {
        let mut c = BufWriter::new(fs::File::create(sidecar_path(path))?);
        writeln!(c, "seq,theta0,omega,z1,z2,z3,z4")?;
        for (i, r) in latents.iter().enumerate() {
            writeln!(
                c,
                "{},{},{},{},{},{},{}",
                i, r.theta0, r.omega, r.z[0], r.z[1], r.z[2], r.z[3]
            )?;
        }
        c.flush()?;
    }
    Ok(())
}

fn take<'a>(buf: &'a [u8], off: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if buf.len() < *off + n {
        return Err(PgnError::Format(format!(
            "truncated dataset file while reading {}",
            what
        )));
    }
    let s = &buf[*off..*off + n];
    *off += n;
    Ok(s)
}

fn read_u32(buf: &[u8], off: &mut usize, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, off, 4, what)?.try_into().unwrap()))
}

pub fn read_dataset(path: &Path) -> Result<VideoDataset> {
    let buf = fs::read(path)?;
    let mut off = 0usize;
    if take(&buf, &mut off, 4, "magic")? != MAGIC {
        return Err(PgnError::Format(format!("{}: bad magic", path.display())));
    }
    let version = read_u32(&buf, &mut off, "version")?;
    if version != VERSION {
        return Err(PgnError::Format(format!("unsupported version {}", version)));
    }
    let n_seq = read_u32(&buf, &mut off, "n_seq")? as usize;
    let t = read_u32(&buf, &mut off, "T")? as usize;
    let h = read_u32(&buf, &mut off, "H")? as usize;
    let w = read_u32(&buf, &mut off, "W")? as usize;
    let channels = read_u32(&buf, &mut off, "channels")? as usize;
    let dtype = read_u32(&buf, &mut off, "dtype")?;
    if dtype != 0 {
        return Err(PgnError::Format(format!("unsupported dtype {}", dtype)));
    }
    let mut constants = [0u8; 64];
    constants.copy_from_slice(take(&buf, &mut off, 64, "constants")?);
    let n_vals = n_seq * t * channels * h * w;
    let raw = take(&buf, &mut off, n_vals * 4, "frames")?;
    if off != buf.len() {
        return Err(PgnError::Format("trailing bytes after frames".into()));
    }
    let frames: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let sidecar = sidecar_path(path);
    let latents = if sidecar.exists() {
        Some(read_latents_csv(&sidecar, n_seq)?)
    } else {
        None
    };
    let ds = VideoDataset {
        split: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        n_seq,
        t,
        h,
        w,
        channels,
        constants,
        frames,
        latents,
    };
    ds.validate()?;
    Ok(ds)
}

fn read_latents_csv(path: &Path, n_seq: usize) -> Result<Vec<LatentRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| PgnError::Format("empty latents csv".into()))?;
    if header.trim() != "seq,theta0,omega,z1,z2,z3,z4" {
        return Err(PgnError::Format(format!("bad latents header: {}", header)));
    }
    let mut out = Vec::with_capacity(n_seq);
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 7 {
            return Err(PgnError::Format(format!("latents row {}: wrong arity", i)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| PgnError::Format(format!("latents row {}: bad number {:?}", i, s)))
        };
        let seq: usize = fields[0]
            .parse()
            .map_err(|_| PgnError::Format(format!("latents row {}: bad seq", i)))?;
        if seq != i {
            return Err(PgnError::Format(format!("latents row {}: seq {}", i, seq)));
        }
        out.push(LatentRecord {
            theta0: parse(fields[1])?,
            omega: parse(fields[2])?,
            z: [
                parse(fields[3])?,
                parse(fields[4])?,
                parse(fields[5])?,
                parse(fields[6])?,
            ],
        });
    }
    if out.len() != n_seq {
        return Err(PgnError::Format(format!(
            "latents rows {} != n_seq {}",
            out.len(),
            n_seq
        )));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// labeled classification images

/// Labels sidecar path: `x.pgnv` → `x.labels.csv`.
pub fn labels_path(path: &Path) -> PathBuf {
    path.with_extension("labels.csv")
}

const LABELS_HEADER: &str = "idx,id,angle_idx,angle,theta0,omega,z1,z2,z3,z4";

/// Store a classification set as a one-frame-per-sequence PGNV file plus a
/// labels CSV carrying identity, angle, and the identity's latent record.
pub fn write_labeled_images(path: &Path, set: &super::LabeledImages) -> Result<()> {
    let ds = VideoDataset {
        split: "classes".into(),
        n_seq: set.n_ids * set.n_angles,
        t: 1,
        h: set.h,
        w: set.w,
        channels: 1,
        constants: [0u8; 64],
        frames: set.images.clone(),
        latents: None,
    };
    write_dataset(path, &ds)?;
    let mut c = BufWriter::new(fs::File::create(labels_path(path))?);
    writeln!(c, "{}", LABELS_HEADER)?;
    for i in 0..set.ids.len() {
        let r = &set.latents[set.ids[i]];
        writeln!(
            c,
            "{},{},{},{},{},{},{},{},{},{}",
            i,
            set.ids[i],
            set.angle_idx[i],
            set.angles[set.angle_idx[i]],
            r.theta0,
            r.omega,
            r.z[0],
            r.z[1],
            r.z[2],
            r.z[3]
        )?;
    }
    c.flush()?;
    Ok(())
}

pub fn read_labeled_images(path: &Path) -> Result<super::LabeledImages> {
    let ds = read_dataset(path)?;
    if ds.t != 1 || ds.channels != 1 {
        return Err(PgnError::Format("classification set must have T=1, C=1".into()));
    }
    let text = fs::read_to_string(labels_path(path))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| PgnError::Format("empty labels csv".into()))?;
    if header.trim() != LABELS_HEADER {
        return Err(PgnError::Format(format!("bad labels header: {}", header)));
    }
    let mut ids = Vec::with_capacity(ds.n_seq);
    let mut angle_idx = Vec::with_capacity(ds.n_seq);
    let mut rows: Vec<(usize, usize, f64, LatentRecord)> = Vec::with_capacity(ds.n_seq);
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 10 {
            return Err(PgnError::Format(format!("labels row {}: wrong arity", i)));
        }
        let pu = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| PgnError::Format(format!("labels row {}: bad index {:?}", i, s)))
        };
        let pf = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| PgnError::Format(format!("labels row {}: bad number {:?}", i, s)))
        };
        if pu(f[0])? != i {
            return Err(PgnError::Format(format!("labels row {}: bad idx", i)));
        }
        let (id, ai) = (pu(f[1])?, pu(f[2])?);
        ids.push(id);
        angle_idx.push(ai);
        rows.push((
            id,
            ai,
            pf(f[3])?,
            LatentRecord {
                theta0: pf(f[4])?,
                omega: pf(f[5])?,
                z: [pf(f[6])?, pf(f[7])?, pf(f[8])?, pf(f[9])?],
            },
        ));
    }
    if rows.len() != ds.n_seq {
        return Err(PgnError::Format(format!(
            "labels rows {} != images {}",
            rows.len(),
            ds.n_seq
        )));
    }
    let n_ids = ids.iter().max().map(|&m| m + 1).unwrap_or(0);
    let n_angles = angle_idx.iter().max().map(|&m| m + 1).unwrap_or(0);
    if n_ids * n_angles != ds.n_seq {
        return Err(PgnError::Format("labels grid does not cover all images".into()));
    }
    let mut angles = vec![f64::NAN; n_angles];
    let mut latents = vec![
        LatentRecord {
            theta0: 0.0,
            omega: 0.0,
            z: [0.0; 4]
        };
        n_ids
    ];
    for (id, ai, angle, rec) in rows {
        angles[ai] = angle;
        latents[id] = rec;
    }
    if angles.iter().any(|a| a.is_nan()) {
        return Err(PgnError::Format("labels csv missing an angle column".into()));
    }
    Ok(super::LabeledImages {
        n_ids,
        n_angles,
        h: ds.h,
        w: ds.w,
        images: ds.frames,
        ids,
        angle_idx,
        angles,
        latents,
    })
}

#[cfg(test)]
mod tests {
    use crate::data::{gen_balls_dataset, gen_object_dataset};

    use super::*;

    fn tmpdir(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("pgn-io-{}-{}", tag, std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn balls_round_trip_is_bitwise() {
        let d = tmpdir("balls");
        let (tr, _, _) = gen_balls_dataset(2, 0, 0, 8, 30, 30, 5).unwrap();
        let p = d.join("train.pgnv");
        write_dataset(&p, &tr).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back.frames, tr.frames);
        assert_eq!(back.constants, tr.constants);
        assert_eq!((back.n_seq, back.t, back.h, back.w), (2, 8, 30, 30));
        assert!(back.latents.is_none());
        // same dataset written twice → identical bytes
        let p2 = d.join("train2.pgnv");
        write_dataset(&p2, &tr).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn objects_round_trip_with_sidecar() {
        let d = tmpdir("objects");
        let (tr, _, _) = gen_object_dataset(3, 0, 0, 6, 32, 32, 9).unwrap();
        let p = d.join("obj.pgnv");
        write_dataset(&p, &tr).unwrap();
        assert!(sidecar_path(&p).exists());
        let back = read_dataset(&p).unwrap();
        assert_eq!(back.frames, tr.frames);
        let (a, b) = (back.latents.unwrap(), tr.latents.unwrap());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            // `{}` formatting of f64 round-trips exactly
            assert_eq!(x, y);
        }
    }

    #[test]
    fn labeled_images_round_trip() {
        let d = tmpdir("classes");
        let set = crate::data::gen_classification_set(3, 4, 8, 8, 2).unwrap();
        let p = d.join("classes.pgnv");
        write_labeled_images(&p, &set).unwrap();
        let back = read_labeled_images(&p).unwrap();
        assert_eq!((back.n_ids, back.n_angles), (3, 4));
        assert_eq!(back.images, set.images);
        assert_eq!(back.ids, set.ids);
        assert_eq!(back.angle_idx, set.angle_idx);
        assert_eq!(back.angles, set.angles);
        assert_eq!(back.latents.len(), set.latents.len());
        for (a, b) in back.latents.iter().zip(&set.latents) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn bad_magic_and_truncation_are_errors() {
        let d = tmpdir("bad");
        let p = d.join("bad.pgnv");
        fs::write(&p, b"NOPE").unwrap();
        assert!(matches!(read_dataset(&p), Err(PgnError::Format(_))));

        let (tr, _, _) = gen_balls_dataset(1, 0, 0, 4, 10, 10, 1).unwrap();
        let p2 = d.join("trunc.pgnv");
        write_dataset(&p2, &tr).unwrap();
        let bytes = fs::read(&p2).unwrap();
        fs::write(&p2, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(read_dataset(&p2), Err(PgnError::Format(_))));
    }
}
