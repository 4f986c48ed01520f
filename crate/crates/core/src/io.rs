//! File formats: `ctvol` volumes, patch masks, key points and diagrams.
//!
//! A `ctvol` file is one line of JSON header terminated by `\n`, followed
//! directly by `nx * ny * nz` little-endian `f32` values in x-fastest order:
//!
//! ```text
//! {"magic":"ctvol","version":1,"dims":[nx,ny,nz],"dtype":"f32le","order":"x-fastest"}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagram::PersistenceDiagram;
use crate::error::{Error, Result};
use crate::filtration::{Diagrams, PersistencePair};
use crate::volume::{KeyPointSet, PatchMask, Volume};

const MAGIC: &str = "ctvol";
const VERSION: u32 = 1;
const DTYPE: &str = "f32le";
const ORDER: &str = "x-fastest";
const MAX_HEADER_BYTES: u64 = 4096;

#[derive(Debug, Serialize, Deserialize)]
struct CtvolHeader {
    magic: String,
    version: u32,
    dims: [usize; 3],
    dtype: String,
    order: String,
}

pub fn write_ctvol(v: &Volume, mut w: impl Write) -> Result<()> {
    let header =
        CtvolHeader { magic: MAGIC.into(), version: VERSION, dims: v.dims(), dtype: DTYPE.into(), order: ORDER.into() };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(4 * v.len());
    for &x in v.data() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_ctvol(r: impl Read) -> Result<Volume> {
    let mut r = BufReader::new(r);
    let mut line = Vec::new();
    r.by_ref().take(MAX_HEADER_BYTES).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("ctvol header is not terminated by a newline".into()));
    }
    line.pop();
    let header: CtvolHeader =
        serde_json::from_slice(&line).map_err(|e| Error::Format(format!("bad ctvol header: {e}")))?;
    if header.magic != MAGIC || header.version != VERSION {
        return Err(Error::Format(format!(
            "not a ctvol v1 file (magic {:?}, version {})",
            header.magic, header.version
        )));
    }
    if header.dtype != DTYPE || header.order != ORDER {
        return Err(Error::Format(format!("unsupported ctvol layout {}/{}", header.dtype, header.order)));
    }
    let n: usize = header.dims.iter().product();
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != 4 * n {
        return Err(Error::Format(format!(
            "ctvol payload has {} bytes, expected {} for dims {:?}",
            payload.len(),
            4 * n,
            header.dims
        )));
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    Volume::new(header.dims, data).map_err(|e| Error::Format(format!("bad ctvol payload: {e}")))
}

pub fn save_ctvol(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_ctvol(v, BufWriter::new(File::create(path)?))
}

pub fn load_ctvol(path: impl AsRef<Path>) -> Result<Volume> {
    read_ctvol(File::open(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskFile {
    patch_size: [usize; 3],
    dims: [usize; 3],
    masked: Vec<u8>,
    seed: u64,
}

pub fn mask_to_json(m: &PatchMask) -> Result<String> {
    let file = MaskFile {
        patch_size: m.patch_size(),
        dims: m.dims(),
        masked: m.flags().iter().map(|&f| f as u8).collect(),
        seed: m.seed(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn mask_from_json(s: &str) -> Result<PatchMask> {
    let file: MaskFile = serde_json::from_str(s)?;
    let flags = file
        .masked
        .iter()
        .map(|&f| match f {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("mask flags must be 0 or 1, got {other}"))),
        })
        .collect::<Result<_>>()?;
    PatchMask::new(file.dims, file.patch_size, flags, file.seed)
}

#[derive(Debug, Serialize, Deserialize)]
struct KeyPointFile {
    points: Vec<[f64; 3]>,
}

pub fn keypoints_to_json(kp: &KeyPointSet) -> Result<String> {
    Ok(serde_json::to_string(&KeyPointFile { points: kp.points().to_vec() })?)
}

pub fn keypoints_from_json(s: &str) -> Result<KeyPointSet> {
    let file: KeyPointFile = serde_json::from_str(s)?;
    KeyPointSet::from_slice(&file.points)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DiagramPoint {
    dim: usize,
    birth: f64,
    death: f64,
    essential: bool,
    birth_vertex: [usize; 3],
    death_vertex: [usize; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct DiagramFile {
    dims: Vec<usize>,
    points: Vec<DiagramPoint>,
}

/// Serializes the three diagrams, points ordered by dimension and then by
/// birth and death descending.
pub fn diagrams_to_json(d: &Diagrams) -> Result<String> {
    let points = d
        .iter()
        .flat_map(|d| d.points())
        .map(|p| DiagramPoint {
            dim: p.dim,
            birth: p.birth,
            death: p.death,
            essential: p.essential,
            birth_vertex: p.birth_vertex,
            death_vertex: p.death_vertex,
        })
        .collect();
    Ok(serde_json::to_string(&DiagramFile { dims: vec![0, 1, 2], points })?)
}

pub fn diagrams_from_json(s: &str) -> Result<Diagrams> {
    let file: DiagramFile = serde_json::from_str(s)?;
    if let Some(d) = file.dims.iter().find(|&&d| d > 2) {
        return Err(Error::Format(format!("diagram dimension {d} is not supported")));
    }
    let mut by_dim: [Vec<PersistencePair>; 3] = Default::default();
    for p in file.points {
        if p.dim > 2 || !file.dims.contains(&p.dim) {
            return Err(Error::Format(format!("point of undeclared dimension {}", p.dim)));
        }
        by_dim[p.dim].push(PersistencePair {
            dim: p.dim,
            birth: p.birth,
            death: p.death,
            essential: p.essential,
            birth_vertex: p.birth_vertex,
            death_vertex: p.death_vertex,
        });
    }
    let [a, b, c] = by_dim;
    let build =
        |dim, pts| PersistenceDiagram::new(dim, pts).map_err(|e| Error::Format(format!("bad diagram file: {e}")));
    Ok([build(0, a)?, build(1, b)?, build(2, c)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::compute_persistence;
    use crate::volume::{crop_keypoints, make_mask, CropBox};

    #[test]
    fn ctvol_header_is_bit_exact() {
        let v = Volume::new([2, 1, 1], vec![1.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_ctvol(&v, &mut buf).unwrap();
        let header = br#"{"magic":"ctvol","version":1,"dims":[2,1,1],"dtype":"f32le","order":"x-fastest"}"#;
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(buf[header.len()], b'\n');
        assert_eq!(&buf[header.len() + 1..], &[0, 0, 0x80, 0x3f, 0, 0, 0, 0xbf]);
        assert_eq!(read_ctvol(&buf[..]).unwrap(), v);
    }

    #[test]
    fn ctvol_rejects_malformed_files() {
        let v = Volume::filled([2, 2, 2], 0.5).unwrap();
        let mut buf = Vec::new();
        write_ctvol(&v, &mut buf).unwrap();
        assert!(matches!(read_ctvol(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_ctvol(&extra[..]), Err(Error::Format(_))));
        assert!(matches!(read_ctvol(&b"{\"magic\":\"nope\"}\n"[..]), Err(Error::Format(_))));
        assert!(matches!(read_ctvol(&b"no newline"[..]), Err(Error::Format(_))));

        let nan = f32::NAN.to_le_bytes();
        let mut bad = buf[..buf.len() - 4].to_vec();
        bad.extend_from_slice(&nan);
        assert!(matches!(read_ctvol(&bad[..]), Err(Error::Format(_))));
    }

    #[test]
    fn mask_json_round_trip() {
        let m = make_mask([8, 8, 4], [4, 4, 2], 0.5, 9).unwrap();
        let s = mask_to_json(&m).unwrap();
        assert!(s.starts_with(r#"{"patch_size":[4,4,2],"dims":[8,8,4],"masked":["#));
        assert_eq!(mask_from_json(&s).unwrap(), m);
        assert!(mask_from_json(r#"{"patch_size":[2,2,2],"dims":[4,4,4],"masked":[2,0,0,0,0,0,0,0],"seed":0}"#).is_err());
        assert!(mask_from_json(r#"{"patch_size":[2,2,2],"dims":[4,4,4],"masked":[0],"seed":0}"#).is_err());
    }

    #[test]
    fn keypoint_json_round_trip() {
        let kp = crop_keypoints(&CropBox::new([1, 0, 2], [3, 4, 2], [6, 6, 6]).unwrap());
        let s = keypoints_to_json(&kp).unwrap();
        assert_eq!(keypoints_from_json(&s).unwrap(), kp);
        assert!(keypoints_from_json(r#"{"points":[[0,0,0]]}"#).is_err());
    }

    #[test]
    fn diagram_json_round_trip() {
        let v = Volume::from_fn([4, 3, 3], |x, y, z| ((x * 5 + y * 3 + z * 7) % 11) as f64).unwrap();
        let d = compute_persistence(&v);
        let s = diagrams_to_json(&d).unwrap();
        assert!(s.starts_with(r#"{"dims":[0,1,2],"points":[{"dim":0,"#));
        assert_eq!(diagrams_from_json(&s).unwrap(), d);
    }

    #[test]
    fn diagram_json_validates_points() {
        let bad = r#"{"dims":[0,1,2],"points":[{"dim":1,"birth":0.0,"death":1.0,"essential":false,"birth_vertex":[0,0,0],"death_vertex":[0,0,0]}]}"#;
        assert!(matches!(diagrams_from_json(bad), Err(Error::Format(_))));
    }
}
