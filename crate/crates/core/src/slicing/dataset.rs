use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::volume::{load_boxes, load_volume, BBox3D, Volume3D};

pub const VOLUME_HEADER: &str = "volume.mhd";
pub const BOXES_FILE: &str = "boxes.txt";
pub const SPLIT_FILE: &str = "split.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

impl SplitRole {
    pub fn name(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Val => "val",
            SplitRole::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitRole::Train),
            "val" => Some(SplitRole::Val),
            "test" => Some(SplitRole::Test),
            _ => None,
        }
    }
}

/// Volume-level partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn role_of(&self, id: &str) -> Option<SplitRole> {
        let has = |v: &[String]| v.iter().any(|x| x == id);
        if has(&self.train) {
            Some(SplitRole::Train)
        } else if has(&self.validation) {
            Some(SplitRole::Val)
        } else if has(&self.test) {
            Some(SplitRole::Test)
        } else {
            None
        }
    }
}

/// Shuffles `ids` and assigns half (rounded down) to training, the rest to
/// test; `ceil(10%)` of the training half is then held out for validation.
pub fn split_dataset<R: Rng + ?Sized>(ids: &[String], rng: &mut R) -> Result<Split> {
    if ids.len() < 10 {
        return Err(Error::invalid(format!(
            "need at least 10 volumes to split, got {}",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(rng);
    let n_train = ids.len() / 2;
    let n_val = n_train.div_ceil(10);
    let test = shuffled.split_off(n_train);
    let train = shuffled.split_off(n_val);
    Ok(Split {
        train,
        validation: shuffled,
        test,
    })
}

/// Writes `<id> train|val|test` lines in the order of `ids`.
pub fn write_split(path: impl AsRef<Path>, ids: &[String], split: &Split) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for id in ids {
        let role = split
            .role_of(id)
            .ok_or_else(|| Error::invalid(format!("volume {id} is not in the split")))?;
        writeln!(out, "{id} {}", role.name()).expect("write to string");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A volume with its reference boxes attached.
#[derive(Clone, Debug)]
pub struct Case {
    pub id: String,
    pub volume: Volume3D,
    pub boxes: Vec<BBox3D>,
}

impl Case {
    /// Boxes in the order of `names`; `None` where the structure is absent.
    pub fn boxes_for(&self, names: &[String]) -> Vec<Option<&BBox3D>> {
        names
            .iter()
            .map(|n| self.boxes.iter().find(|b| &b.name == n))
            .collect()
    }
}

/// A dataset directory: one sub-directory per volume holding
/// `volume.mhd`, `volume.raw` and `boxes.txt`, plus a `split.txt` manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    entries: Vec<(String, SplitRole)>,
    structures: Vec<String>,
}

impl Dataset {
    /// Reads the manifest and checks that every listed volume has its files.
    /// Structure names are collected in order of first appearance.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let split_path = root.join(SPLIT_FILE);
        let text = fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
        let origin = split_path.display().to_string();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (id, role) = match (parts.next(), parts.next(), parts.next()) {
                (Some(id), Some(role), None) => (id, role),
                _ => return Err(Error::format(&origin, format!("line {}: expected `<id> <role>`", n + 1))),
            };
            let role = SplitRole::parse(role)
                .ok_or_else(|| Error::format(&origin, format!("line {}: unknown role {role:?}", n + 1)))?;
            entries.push((id.to_string(), role));
        }
        let mut structures: Vec<String> = Vec::new();
        for (id, _) in &entries {
            let dir = root.join(id);
            for f in [VOLUME_HEADER, "volume.raw", BOXES_FILE] {
                if !dir.join(f).is_file() {
                    return Err(Error::invalid(format!("volume {id}: missing {f}")));
                }
            }
            for b in load_boxes(dir.join(BOXES_FILE))? {
                if !structures.contains(&b.name) {
                    structures.push(b.name);
                }
            }
        }
        if structures.is_empty() {
            return Err(Error::invalid(format!("dataset {} has no annotated structures", root.display())));
        }
        Ok(Dataset {
            root,
            entries,
            structures,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn structures(&self) -> &[String] {
        &self.structures
    }

    pub fn ids(&self, role: SplitRole) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, r)| *r == role)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Loads a volume and validates its boxes against it.
    pub fn load_case(&self, id: &str) -> Result<Case> {
        let dir = self.root.join(id);
        let volume = load_volume(dir.join(VOLUME_HEADER))?;
        let mut boxes = load_boxes(dir.join(BOXES_FILE))?;
        for b in &mut boxes {
            b.attach(&volume)
                .map_err(|e| Error::invalid(format!("volume {id}: {e}")))?;
        }
        Ok(Case {
            id: id.to_string(),
            volume,
            boxes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i:03}")).collect()
    }

    #[test]
    fn split_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (n, expect) in [(100, (45, 5, 50)), (10, (4, 1, 5)), (60, (27, 3, 30))] {
            let s = split_dataset(&ids(n), &mut rng).unwrap();
            assert_eq!((s.train.len(), s.validation.len(), s.test.len()), expect);
            let all: HashSet<_> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
            assert_eq!(all.len(), n);
        }
        assert!(split_dataset(&ids(9), &mut rng).is_err());
    }

    #[test]
    fn open_reports_missing_boxes() {
        let dir = tempfile::tempdir().unwrap();
        let vol = Volume3D::filled([2, 2, 2], [1.0; 3], 0.0).unwrap();
        for id in ["a", "b"] {
            fs::create_dir(dir.path().join(id)).unwrap();
            crate::volume::write_volume(&vol, dir.path().join(id).join(VOLUME_HEADER)).unwrap();
        }
        fs::write(dir.path().join("a").join(BOXES_FILE), "heart 0 1 0 1 0 1\n").unwrap();
        fs::write(dir.path().join(SPLIT_FILE), "a train\nb test\n").unwrap();
        let err = Dataset::open(dir.path()).unwrap_err().to_string();
        assert!(err.contains("volume b") && err.contains(BOXES_FILE), "{err}");

        fs::write(dir.path().join("b").join(BOXES_FILE), "aorta 0 0 0 0 0 1\nheart 0 1 0 1 0 1\n").unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.structures(), &["heart".to_string(), "aorta".to_string()]);
        assert_eq!(ds.ids(SplitRole::Test), vec!["b"]);
        let case = ds.load_case("a").unwrap();
        let names = ds.structures().to_vec();
        let b = case.boxes_for(&names);
        assert!(b[0].is_some() && b[1].is_none());
    }
}
