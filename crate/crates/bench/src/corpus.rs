//! Map loading and the small/medium/large split.

use std::fmt;
use std::path::{Path, PathBuf};

use gridex_core::{load_world, GroundTruthMap};

use crate::BenchError;

#[derive(Clone, Debug)]
pub struct MapEntry {
    /// File stem, used as the map's name in reports.
    pub name: String,
    pub path: PathBuf,
    pub world: GroundTruthMap,
}

impl MapEntry {
    pub fn free_cells(&self) -> usize {
        self.world.free_component_size()
    }
}

pub fn load_map(path: &Path) -> Result<MapEntry, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Usage(format!("map {}: {e}", path.display())))?;
    let world = load_world(&text).map_err(|e| BenchError::Usage(format!("{}: {e}", path.display())))?;
    let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    Ok(MapEntry { name, path: path.to_path_buf(), world })
}

/// Every `*.txt` map in `dir`, sorted by name.
pub fn load_corpus(dir: &Path) -> Result<Vec<MapEntry>, BenchError> {
    let rd = std::fs::read_dir(dir).map_err(|e| BenchError::Usage(format!("corpus {}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| BenchError::Io(e.to_string()))?.path();
        if p.extension().is_some_and(|x| x == "txt") {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(BenchError::Usage(format!("corpus {} holds no .txt maps", dir.display())));
    }
    paths.iter().map(|p| load_map(p)).collect()
}

/// The maps shipped with the crate.
pub fn bundled_corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("maps")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        })
    }
}

/// Free-cell thresholds `(t1, t2)`: below `t1` is small, at or above `t2` is
/// large. Fixed by the tertiles of the bundled corpus so classes do not shift
/// with whichever maps a run happens to include.
pub const SIZE_THRESHOLDS: (usize, usize) = (1500, 5000);

pub fn size_class(free_cells: usize) -> SizeClass {
    let (t1, t2) = SIZE_THRESHOLDS;
    if free_cells < t1 {
        SizeClass::Small
    } else if free_cells < t2 {
        SizeClass::Medium
    } else {
        SizeClass::Large
    }
}

/// Boundaries between the lower, middle and upper thirds of `counts`:
/// midpoints between the neighbouring order statistics.
pub fn tertile_thresholds(counts: &[usize]) -> Option<(usize, usize)> {
    if counts.len() < 3 {
        return None;
    }
    let mut v = counts.to_vec();
    v.sort_unstable();
    let n = v.len();
    let cut = |k: usize| (v[k - 1] + v[k]) / 2;
    Some((cut(n / 3), cut(2 * n / 3)))
}
