use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::CliError;

pub struct Pair {
    pub name: String,
    pub noisy: PathBuf,
    pub clean: PathBuf,
}

pub fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// PNG files directly inside `dir`, sorted by name.
pub fn png_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?.path();
        let is_png = p
            .extension()
            .is_some_and(|x| x.eq_ignore_ascii_case("png"));
        if p.is_file() && is_png {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Matches `<name>_noisy.png` with `<name>_clean.png`. Any file without a
/// partner is an error listing every orphan.
pub fn find_pairs(dir: &Path) -> Result<Vec<Pair>, CliError> {
    let mut noisy = BTreeMap::new();
    let mut clean = BTreeMap::new();
    let mut orphans = Vec::new();
    for p in png_files(dir)? {
        let s = stem(&p);
        if let Some(name) = s.strip_suffix("_noisy") {
            noisy.insert(name.to_string(), p);
        } else if let Some(name) = s.strip_suffix("_clean") {
            clean.insert(name.to_string(), p);
        } else {
            orphans.push(p);
        }
    }
    let mut pairs = Vec::new();
    for (name, n) in noisy {
        match clean.remove(&name) {
            Some(c) => pairs.push(Pair { name, noisy: n, clean: c }),
            None => orphans.push(n),
        }
    }
    orphans.extend(clean.into_values());
    if !orphans.is_empty() {
        orphans.sort();
        let list: Vec<String> = orphans.iter().map(|p| format!("  {}", p.display())).collect();
        return Err(CliError::Data(format!(
            "{} unpaired file(s) in {}:\n{}",
            orphans.len(),
            dir.display(),
            list.join("\n")
        )));
    }
    if pairs.is_empty() {
        return Err(CliError::Data(format!("no <name>_noisy.png/<name>_clean.png pairs in {}", dir.display())));
    }
    Ok(pairs)
}
