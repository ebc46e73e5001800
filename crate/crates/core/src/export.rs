use nalgebra::Vector3;
use ndarray::ArrayView2;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes via a unique temp file in the target directory plus rename, so a
/// crash never leaves a partial file at `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("path {} has no file name", path.display())))?;
    let tmp_name = format!(
        ".{}.{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    );
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => std::path::PathBuf::from(&tmp_name),
    };
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

/// Wavefront OBJ with coordinates at f32 precision (shortest round-trip
/// formatting) and 1-based triangle indices.
pub fn write_obj(path: &Path, verts: &[Vector3<f64>], faces: &[[u32; 3]]) -> Result<()> {
    let mut text = String::with_capacity(verts.len() * 32 + faces.len() * 16);
    for v in verts {
        text.push_str(&format!("v {} {} {}\n", v.x as f32, v.y as f32, v.z as f32));
    }
    for f in faces {
        text.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    atomic_write(path, text.as_bytes())
}

/// Reads back the vertex and face lines of [`write_obj`] output. Unknown
/// lines are skipped; `f` entries may carry `/...` suffixes.
#[allow(clippy::type_complexity)]
pub fn parse_obj(path: &Path) -> Result<(Vec<[f32; 3]>, Vec<[u32; 3]>)> {
    let text = std::fs::read_to_string(path)?;
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut xyz = [0.0f32; 3];
                for c in xyz.iter_mut() {
                    *c = tok
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::Format(format!("bad obj vertex line {lineno}")))?;
                }
                verts.push(xyz);
            }
            Some("f") => {
                let mut idx = [0u32; 3];
                for c in idx.iter_mut() {
                    let t = tok
                        .next()
                        .and_then(|t| t.split('/').next())
                        .and_then(|t| t.parse::<u32>().ok())
                        .ok_or_else(|| Error::Format(format!("bad obj face line {lineno}")))?;
                    if t == 0 {
                        return Err(Error::Format(format!("obj face index 0 on line {lineno}")));
                    }
                    *c = t - 1;
                }
                faces.push(idx);
            }
            _ => {}
        }
    }
    Ok((verts, faces))
}

/// Binary PGM (P5, maxval 255); values are clamped to [0, 1] and scaled.
pub fn write_pgm(path: &Path, map: &ArrayView2<f64>) -> Result<()> {
    let (h, w) = map.dim();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for row in map.rows() {
        for &v in row {
            bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    atomic_write(path, &bytes)
}

/// Reads a P5 PGM produced by [`write_pgm`]; returns (height, width, bytes).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let data = std::fs::read(path)?;
    let header_err = || Error::Format("bad pgm header".into());
    // P5\n{w} {h}\n{max}\n then raw bytes
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < data.len() {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&data[start..pos]).map_err(|_| header_err())?);
    }
    if fields.len() != 4 || fields[0] != "P5" || fields[3] != "255" {
        return Err(header_err());
    }
    let w: usize = fields[1].parse().map_err(|_| header_err())?;
    let h: usize = fields[2].parse().map_err(|_| header_err())?;
    pos += 1; // single whitespace after maxval
    if pos + w * h > data.len() {
        return Err(Error::Format("pgm payload truncated".into()));
    }
    Ok((h, w, data[pos..pos + w * h].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn obj_round_trip_is_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.obj");
        let verts = vec![
            Vector3::new(0.1234567890123, -5.0e-4, 2.0 / 3.0),
            Vector3::new(1.0, 2.0, 3.0),
        ];
        let faces = vec![[0u32, 1, 0]];
        write_obj(&path, &verts, &faces).unwrap();
        let (rv, rf) = parse_obj(&path).unwrap();
        assert_eq!(rf, faces);
        for (orig, back) in verts.iter().zip(&rv) {
            assert_eq!(orig.x as f32, back[0]);
            assert_eq!(orig.y as f32, back[1]);
            assert_eq!(orig.z as f32, back[2]);
        }
    }

    #[test]
    fn pgm_bytes_are_frozen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        let map = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 0.5, 2.0]).unwrap();
        write_pgm(&path, &map.view()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..9], b"P5\n2 2\n25");
        assert_eq!(&bytes[bytes.len() - 4..], &[0u8, 255, 128, 255]);
        let (h, w, pix) = read_pgm(&path).unwrap();
        assert_eq!((h, w), (2, 2));
        assert_eq!(pix, vec![0, 255, 128, 255]);
    }

    #[test]
    fn atomic_write_replaces_existing_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        // no temp litter
        let leftover: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name() != "out.txt")
            .collect();
        assert!(leftover.is_empty());
    }
}
