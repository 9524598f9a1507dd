//! Stage bookkeeping for `idt run`: content keys, up-to-date stamps and the
//! output-directory lock.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

const STAMP: &str = ".stage-key";
const LOCK: &str = ".idt.lock";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a stage's name, its config section and the keys of the stages
/// it consumes.
pub fn stage_key(name: &str, section: &impl Serialize, upstream: &[&str]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(section)?);
    for u in upstream {
        h.update([0]);
        h.update(u.as_bytes());
    }
    Ok(hex(&h.finalize()))
}

/// Hash over every file below `root`: relative paths and contents, in
/// sorted order.
pub fn tree_digest(root: &Path) -> Result<String> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(root).unwrap_or(&f);
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(&f).with_context(|| format!("reading {}", f.display()))?);
    }
    Ok(hex(&h.finalize()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Cached,
}

/// Runs `body` into `<out>/<name>` unless the directory's stamp already
/// matches `key`. A stale directory is cleared first; the stamp is written
/// only after `body` succeeds, so an interrupted stage re-runs.
pub fn run_stage(
    out: &Path,
    name: &str,
    key: &str,
    force: bool,
    body: impl FnOnce(&Path) -> Result<()>,
) -> Result<Outcome> {
    let dir = out.join(name);
    let stamp = dir.join(STAMP);
    if !force && std::fs::read_to_string(&stamp).is_ok_and(|s| s.trim() == key) {
        println!("stage {name}: up to date");
        return Ok(Outcome::Cached);
    }
    let t = Instant::now();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    body(&dir).with_context(|| format!("stage `{name}` failed"))?;
    std::fs::write(&stamp, key).with_context(|| format!("writing {}", stamp.display()))?;
    println!("stage {name}: done in {:.1}s", t.elapsed().as_secs_f64());
    Ok(Outcome::Ran)
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let path = out.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "{} is locked by another run; delete {} if that run is gone",
                out.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Writes `contents` unless the file already holds exactly that.
pub fn write_if_changed(path: &Path, contents: &[u8]) -> Result<bool> {
    if std::fs::read(path).is_ok_and(|old| old == contents) {
        return Ok(false);
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_depend_on_every_input() {
        let a = stage_key("train", &("x", 1), &["u"]).unwrap();
        assert_eq!(a, stage_key("train", &("x", 1), &["u"]).unwrap());
        assert_ne!(a, stage_key("tree", &("x", 1), &["u"]).unwrap());
        assert_ne!(a, stage_key("train", &("x", 2), &["u"]).unwrap());
        assert_ne!(a, stage_key("train", &("x", 1), &["v"]).unwrap());
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn stage_is_skipped_when_key_matches() {
        let tmp = tempfile::tempdir().unwrap();
        let mut runs = 0;
        for _ in 0..2 {
            run_stage(tmp.path(), "s", "k1", false, |d| {
                runs += 1;
                Ok(std::fs::write(d.join("f"), "x")?)
            })
            .unwrap();
        }
        assert_eq!(runs, 1);
        run_stage(tmp.path(), "s", "k2", false, |_| {
            runs += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(runs, 2);
        assert!(!tmp.path().join("s/f").exists());
        run_stage(tmp.path(), "s", "k2", true, |_| {
            runs += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(runs, 3);
    }

    #[test]
    fn failed_stage_leaves_no_stamp() {
        let tmp = tempfile::tempdir().unwrap();
        let err = run_stage(tmp.path(), "s", "k", false, |_| bail!("boom")).unwrap_err();
        assert!(format!("{err:#}").contains("stage `s` failed: boom"));
        assert!(!tmp.path().join("s").join(STAMP).exists());
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let tmp = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(tmp.path()).unwrap();
        assert!(DirLock::acquire(tmp.path()).is_err());
        drop(lock);
        DirLock::acquire(tmp.path()).unwrap();
    }

    #[test]
    fn digest_tracks_content() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir(tmp.path().join("a")).unwrap();
        std::fs::write(tmp.path().join("a/x"), "1").unwrap();
        let d1 = tree_digest(tmp.path()).unwrap();
        assert_eq!(d1, tree_digest(tmp.path()).unwrap());
        std::fs::write(tmp.path().join("a/x"), "2").unwrap();
        assert_ne!(d1, tree_digest(tmp.path()).unwrap());
    }
}
