//! Sequence file I/O. One JSON object per line:
//! `{"id": str, "label": int|null, "T": int, "K": 17, "frames": [[[x,y]x17]xT], "valid": [bool xT]}`
//!
//! Numbers are serialized with full 64-bit round-trip precision, so
//! `read(write(x)) == x` element-wise and repeated writes are byte-stable.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{SkeletonSequence, NUM_JOINTS};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeqRecord {
    id: String,
    label: Option<usize>,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "K")]
    k: usize,
    frames: Vec<Vec<[f64; 2]>>,
    valid: Vec<bool>,
}

impl SeqRecord {
    fn from_sequence(seq: &SkeletonSequence) -> SeqRecord {
        SeqRecord {
            id: seq.id.clone(),
            label: seq.label,
            t: seq.len(),
            k: NUM_JOINTS,
            frames: seq.frames.iter().map(|f| f.to_vec()).collect(),
            valid: seq.valid.clone(),
        }
    }

    fn into_sequence(self, line: usize) -> Result<SkeletonSequence> {
        if self.k != NUM_JOINTS {
            return Err(Error::Parse {
                line,
                msg: format!("K = {}, expected {}", self.k, NUM_JOINTS),
            });
        }
        if self.frames.len() != self.t {
            return Err(Error::Parse {
                line,
                msg: format!("T = {} but {} frames present", self.t, self.frames.len()),
            });
        }
        let mut frames = Vec::with_capacity(self.frames.len());
        for (t, f) in self.frames.iter().enumerate() {
            if f.len() != NUM_JOINTS {
                return Err(Error::Parse {
                    line,
                    msg: format!("frame {t} has {} joints, expected {}", f.len(), NUM_JOINTS),
                });
            }
            let mut frame = [[0.0; 2]; NUM_JOINTS];
            frame.copy_from_slice(f);
            frames.push(frame);
        }
        SkeletonSequence::new(self.id, self.label, frames, self.valid)
    }
}

pub fn read_sequences(path: impl AsRef<Path>) -> Result<Vec<SkeletonSequence>> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SeqRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(record.into_sequence(i + 1)?);
    }
    Ok(out)
}

pub fn write_sequences(seqs: &[SkeletonSequence], path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    for seq in seqs {
        let record = SeqRecord::from_sequence(seq);
        let json = serde_json::to_string(&record).map_err(|e| Error::InvalidInput(e.to_string()))?;
        writer.write_all(json.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::skeleton::Frame;

    fn random_seq(rng: &mut Rng, t: usize, id: &str) -> SkeletonSequence {
        let frames: Vec<Frame> = (0..t)
            .map(|_| {
                let mut f: Frame = [[0.0; 2]; NUM_JOINTS];
                for j in f.iter_mut() {
                    *j = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
                }
                f
            })
            .collect();
        SkeletonSequence::fully_valid(id, Some(rng.below(4)), frames).unwrap()
    }

    fn tmp_path(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("skelact_jsonl_{}_{}", std::process::id(), name))
    }

    #[test]
    fn two_line_file_yields_two_sequences() {
        let mut rng = Rng::new(1);
        let seqs = vec![random_seq(&mut rng, 5, "a"), random_seq(&mut rng, 5, "b")];
        let path = tmp_path("two");
        write_sequences(&seqs, &path).unwrap();
        let back = read_sequences(&path).unwrap();
        assert_eq!(back.len(), 2);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn roundtrip_is_lossless() {
        let mut rng = Rng::new(2);
        let seqs: Vec<_> = (0..20).map(|i| random_seq(&mut rng, 7, &format!("s{i}"))).collect();
        let path = tmp_path("rt");
        write_sequences(&seqs, &path).unwrap();
        let back = read_sequences(&path).unwrap();
        assert_eq!(seqs, back);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn repeated_writes_are_byte_stable() {
        let mut rng = Rng::new(3);
        let seqs: Vec<_> = (0..100).map(|i| random_seq(&mut rng, 6, &format!("s{i}"))).collect();
        let p1 = tmp_path("bs1");
        let p2 = tmp_path("bs2");
        write_sequences(&seqs, &p1).unwrap();
        write_sequences(&seqs, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        std::fs::remove_file(p1).ok();
        std::fs::remove_file(p2).ok();
    }

    #[test]
    fn empty_list_writes_empty_file() {
        let path = tmp_path("empty");
        write_sequences(&[], &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
        assert!(read_sequences(&path).unwrap().is_empty());
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn invalid_frame_with_nonzero_coords_is_rejected() {
        let path = tmp_path("badmask");
        let frames = "[[0.1,0.2],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0]]";
        let zero = "[[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0]]";
        let line = format!(
            "{{\"id\":\"x\",\"label\":null,\"T\":3,\"K\":17,\"frames\":[{zero},{frames},{zero}],\"valid\":[true,false,true]}}"
        );
        std::fs::write(&path, line).unwrap();
        let err = read_sequences(&path).unwrap_err();
        assert!(matches!(err, Error::Invariant { field: "frames", .. }), "{err}");
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn short_sequence_is_rejected() {
        let path = tmp_path("short");
        let zero = "[[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0]]";
        let line = format!(
            "{{\"id\":\"x\",\"label\":0,\"T\":2,\"K\":17,\"frames\":[{zero},{zero}],\"valid\":[true,true]}}"
        );
        std::fs::write(&path, line).unwrap();
        assert!(read_sequences(&path).is_err());
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn parse_error_reports_line_number() {
        let path = tmp_path("badline");
        std::fs::write(&path, "not json\n").unwrap();
        match read_sequences(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::remove_file(path).ok();
    }
}
