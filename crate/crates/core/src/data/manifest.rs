use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sample::VideoSample;

use super::feature_file::read_feature_file;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(Error::Config(format!("unknown split `{other}` (train or test)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
        })
    }
}

/// List of feature files with their split, one `path<TAB>split` per line.
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<(PathBuf, Split)>,
    /// `#` lines, without the marker
    pub comments: Vec<String>,
    /// directory relative paths are resolved against
    pub base: PathBuf,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: impl Into<PathBuf>) -> Result<Self> {
        let mut m = Self {
            base: base.into(),
            ..Self::default()
        };
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if let Some(c) = line.strip_prefix('#') {
                m.comments.push(c.trim().to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (path, split) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("manifest line {}: expected path<TAB>split", i + 1)))?;
            let split: Split = split.trim().parse().map_err(|e| Error::Config(format!("manifest line {}: {e}", i + 1)))?;
            if !seen.insert(path.to_string()) {
                return Err(Error::Config(format!("manifest line {}: duplicate path {path}", i + 1)));
            }
            m.entries.push((PathBuf::from(path), split));
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.comments {
            s.push_str(&format!("# {c}\n"));
        }
        for (p, split) in &self.entries {
            s.push_str(&format!("{}\t{split}\n", p.display()));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|(_, s)| *s == split).count()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    pub fn paths(&self, split: Split) -> Vec<PathBuf> {
        self.entries
            .iter()
            .filter(|(_, s)| *s == split)
            .map(|(p, _)| self.resolve(p))
            .collect()
    }

    /// Reads every file of one split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<VideoSample>> {
        self.paths(split).iter().map(read_feature_file).collect()
    }

    /// Reads every file of one split along with its manifest path.
    pub fn load_named(&self, split: Split) -> Result<Vec<(String, VideoSample)>> {
        self.entries
            .iter()
            .filter(|(_, s)| *s == split)
            .map(|(p, _)| Ok((p.display().to_string(), read_feature_file(self.resolve(p))?)))
            .collect()
    }
}
