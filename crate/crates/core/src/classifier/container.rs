//! Binary model container.
//!
//! ```text
//! offset  size   field
//! 0       4      magic "QRCM"
//! 4       4      version (u32 LE)
//! 8       1      kind tag: 1 = softmax head, 2 = SVM ensemble
//! 9       8      dim (u64 LE)
//! 17      8      classes (u64 LE)
//! 25      ...    parameters, f64 LE
//! ```
//!
//! Softmax parameters are the `dim × classes` weight matrix (row-major)
//! followed by `classes` biases. SVM parameters are the `classes × dim`
//! member weight matrix (row-major, one row per member) followed by
//! `classes` biases.

use std::io::Write;
use std::path::Path;

use super::{Classifier, LinearMember, SoftmaxHead, SvmEnsemble};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"QRCM";
pub const VERSION: u32 = 1;

const TAG_SOFTMAX: u8 = 1;
const TAG_SVM: u8 = 2;
const HEADER_LEN: usize = 25;

impl Classifier {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (tag, dim, classes, params): (u8, usize, usize, Vec<f64>) = match self {
            Classifier::Softmax(h) => (
                TAG_SOFTMAX,
                h.dim(),
                h.classes(),
                h.weights().iter().chain(h.bias()).copied().collect(),
            ),
            Classifier::Svm(e) => (
                TAG_SVM,
                e.dim(),
                e.classes(),
                e.members()
                    .iter()
                    .flat_map(|m| m.w.iter().copied())
                    .chain(e.members().iter().map(|m| m.b))
                    .collect(),
            ),
        };
        let mut out = Vec::with_capacity(HEADER_LEN + params.len() * 8);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(tag);
        out.extend_from_slice(&(dim as u64).to_le_bytes());
        out.extend_from_slice(&(classes as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |msg: String| Error::Container(msg);
        if bytes.len() < HEADER_LEN {
            return Err(err(format!("truncated header ({} bytes)", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(err("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let tag = bytes[8];
        let dim = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let classes = u64::from_le_bytes(bytes[17..25].try_into().unwrap());
        let count = dim
            .checked_mul(classes)
            .and_then(|n| n.checked_add(classes))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| err("parameter count overflows".into()))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() as u64 != count {
            return Err(err(format!(
                "expected {count} parameter bytes, found {}",
                body.len()
            )));
        }
        let (dim, classes) = (dim as usize, classes as usize);
        let params: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (matrix, bias) = params.split_at(dim * classes);
        match tag {
            TAG_SOFTMAX => Ok(Classifier::Softmax(SoftmaxHead::from_parts(
                dim,
                classes,
                matrix.to_vec(),
                bias.to_vec(),
            )?)),
            TAG_SVM => {
                if dim == 0 {
                    return Err(err("SVM ensemble with zero dim".into()));
                }
                let members = matrix
                    .chunks_exact(dim)
                    .zip(bias)
                    .map(|(w, &b)| LinearMember { w: w.to_vec(), b })
                    .collect();
                Ok(Classifier::Svm(SvmEnsemble::from_members(members)?))
            }
            other => Err(err(format!("unknown kind tag {other}"))),
        }
    }
}

/// Writes the container atomically: the target only appears once fully written.
pub fn save_model(model: &Classifier, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp_path = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    ));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp_path)?;
        f.write_all(&model.to_bytes())?;
        f.sync_all()?;
        std::fs::rename(&tmp_path, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp_path);
        Error::io(path, e)
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Classifier> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Classifier::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head() -> Classifier {
        SoftmaxHead::from_parts(
            2,
            3,
            vec![0.1, -0.2, 0.3, 1e-300, -0.0, 7.5],
            vec![1.0, 2.0, 3.0],
        )
        .unwrap()
        .into()
    }

    #[test]
    fn header_layout() {
        let bytes = head().to_bytes();
        assert_eq!(&bytes[..4], b"QRCM");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(bytes[8], 1);
        assert_eq!(&bytes[9..17], &2u64.to_le_bytes());
        assert_eq!(&bytes[17..25], &3u64.to_le_bytes());
        assert_eq!(bytes.len(), 25 + 9 * 8);
        assert_eq!(&bytes[25..33], &0.1f64.to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = head().to_bytes();
        assert!(Classifier::from_bytes(&bytes[..20]).is_err());
        assert!(Classifier::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Classifier::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(Classifier::from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[4] = 2;
        assert!(Classifier::from_bytes(&bad).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let model = head();
        save_model(&model, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
