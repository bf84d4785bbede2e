use std::path::Path;

use super::{AudioError, FeatureMatrix};

pub const FEATURE_MAGIC: &[u8; 8] = b"DTFEAT01";

/// `DTFEAT01`, frames (u32 LE), dim (u32 LE), then row-major f32 LE.
pub fn write_features(path: impl AsRef<Path>, f: &FeatureMatrix) -> Result<(), AudioError> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(16 + f.data().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(f.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(f.dim() as u32).to_le_bytes());
    for v in f.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| AudioError::Io(path.display().to_string(), e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix, AudioError> {
    let path = path.as_ref();
    let b = std::fs::read(path).map_err(|e| AudioError::Io(path.display().to_string(), e))?;
    if b.len() < 16 || &b[..8] != FEATURE_MAGIC {
        return Err(AudioError::Format(format!("{}: bad magic", path.display())));
    }
    let frames = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(b[12..16].try_into().unwrap()) as usize;
    if b.len() != 16 + frames * dim * 4 {
        return Err(AudioError::Format(format!(
            "{}: expected {} bytes of data for {frames}x{dim}, got {}",
            path.display(),
            frames * dim * 4,
            b.len() - 16
        )));
    }
    let data = b[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(frames, dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.feat");
        let m = FeatureMatrix::new(2, 3, vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, 7.0]).unwrap();
        write_features(&p, &m).unwrap();
        let raw = std::fs::read(&p).unwrap();
        assert_eq!(&raw[..8], b"DTFEAT01");
        assert_eq!(&raw[8..16], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(read_features(&p).unwrap(), m);
        std::fs::write(&p, &raw[..raw.len() - 1]).unwrap();
        assert!(read_features(&p).is_err());
    }
}
