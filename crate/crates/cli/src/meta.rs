//! Sidecar written next to a checkpoint: the structure names and slice
//! spacing the model was trained with, as `key = value` lines.

use std::fs;
use std::path::{Path, PathBuf};

use bobnet::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelMeta {
    pub structures: Vec<String>,
    pub target_spacing_mm: f64,
    pub threshold: f64,
}

pub fn meta_path(model: &Path) -> PathBuf {
    let mut p = model.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

impl ModelMeta {
    pub fn to_text(&self) -> String {
        format!(
            "structures = {}\ntarget_spacing_mm = {}\nthreshold = {}\n",
            self.structures.join(","),
            self.target_spacing_mm,
            self.threshold
        )
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format {
            path: origin.to_string(),
            message: msg,
        };
        let (mut structures, mut spacing, mut threshold) = (None, None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            match k {
                "structures" => structures = Some(v.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>()),
                "target_spacing_mm" => spacing = Some(v.parse().map_err(|_| bad(format!("bad spacing {v:?}")))?),
                "threshold" => threshold = Some(v.parse().map_err(|_| bad(format!("bad threshold {v:?}")))?),
                _ => return Err(bad(format!("unknown key {k:?}"))),
            }
        }
        match (structures, spacing, threshold) {
            (Some(structures), Some(target_spacing_mm), Some(threshold)) => Ok(ModelMeta {
                structures,
                target_spacing_mm,
                threshold,
            }),
            _ => Err(bad("missing keys".into())),
        }
    }

    pub fn save(&self, model: &Path) -> Result<()> {
        let path = meta_path(model);
        fs::write(&path, self.to_text()).map_err(|source| Error::Io { path, source })
    }

    /// `None` if the model has no sidecar.
    pub fn load(model: &Path) -> Result<Option<Self>> {
        let path = meta_path(model);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string()).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let m = ModelMeta {
            structures: vec!["heart".into(), "aorta".into()],
            target_spacing_mm: 1.5,
            threshold: 0.5,
        };
        assert_eq!(ModelMeta::parse(&m.to_text(), "t").unwrap(), m);
        assert!(ModelMeta::parse("structures = a\n", "t").is_err());
        assert_eq!(meta_path(Path::new("out/m.bbn")), PathBuf::from("out/m.bbn.meta"));
    }
}
