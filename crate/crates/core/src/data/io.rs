//! Dataset directories: `manifest.tsv` plus one sub-directory per clip
//! holding `video.tns`, `audio.tns`, `gt.tns`, `fixations.txt` and
//! `trajectory.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::codec::{load_tensor, save_tensor};
use super::{ClipSample, Dataset, Domain};
use crate::error::{Error, Result};
use crate::metrics::FixationSet;
use crate::model::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.tsv";

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for clip in &data.clips {
        let cdir = dir.join(&clip.id);
        fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
        save_tensor(cdir.join("video.tns"), &clip.video)?;
        save_tensor(cdir.join("audio.tns"), &clip.audio)?;
        save_tensor(cdir.join("gt.tns"), &clip.gt)?;
        let mut fix = String::new();
        for (r, c) in clip.fixations.points() {
            writeln!(fix, "{r} {c}").unwrap();
        }
        write_text(&cdir.join("fixations.txt"), &fix)?;
        let mut traj = format!("{}\n", if clip.coupled { "coupled" } else { "decoy" });
        for (r, c) in &clip.trajectory {
            writeln!(traj, "{r:?} {c:?}").unwrap();
        }
        write_text(&cdir.join("trajectory.txt"), &traj)?;
    }
    write_text(&dir.join(MANIFEST_FILE), &data.manifest())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<(String, Domain)>> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = read_text(&path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Codec(format!("{}:{}: expected clip_id<TAB>domain", path.display(), n + 1));
        let (id, domain) = line.split_once('\t').ok_or_else(bad)?;
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(bad());
        }
        out.push((id.to_string(), domain.parse().map_err(|_| bad())?));
    }
    if out.is_empty() {
        return Err(Error::Codec(format!("{}: empty manifest", path.display())));
    }
    Ok(out)
}

fn parse_pairs<T: std::str::FromStr>(path: &Path, text: &str) -> Result<Vec<(T, T)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let mut it = line.split_whitespace().map(str::parse::<T>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
                _ => Err(Error::Codec(format!("{}:{}: expected two numbers", path.display(), n + 1))),
            }
        })
        .collect()
}

fn read_clip(dir: &Path, id: &str, domain: Domain) -> Result<ClipSample> {
    let cdir = dir.join(id);
    let video = load_tensor(cdir.join("video.tns"))?;
    let audio = load_tensor(cdir.join("audio.tns"))?;
    let gt_path = cdir.join("gt.tns");
    if !gt_path.exists() {
        return Err(Error::Codec(format!("{}: missing ground truth", cdir.display())));
    }
    let gt = load_tensor(&gt_path)?;
    if gt.ndim() != 2 {
        return Err(Error::Codec(format!("{}: ground truth must be 2-D", gt_path.display())));
    }
    let fix_path = cdir.join("fixations.txt");
    let points = parse_pairs::<usize>(&fix_path, &read_text(&fix_path)?)?;
    let fixations = FixationSet::new(points, gt.shape()[0], gt.shape()[1])
        .map_err(|e| Error::Codec(format!("{}: {e}", fix_path.display())))?;

    let traj_path = cdir.join("trajectory.txt");
    let (coupled, trajectory) = if traj_path.exists() {
        let text = read_text(&traj_path)?;
        let (head, rest) = text.split_once('\n').unwrap_or((&text, ""));
        (head.trim() != "decoy", parse_pairs::<f64>(&traj_path, rest)?)
    } else {
        (true, Vec::new())
    };
    Ok(ClipSample {
        id: id.to_string(),
        domain,
        video,
        audio,
        gt,
        fixations,
        trajectory,
        coupled,
    })
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let clips = read_manifest(dir)?
        .into_iter()
        .map(|(id, domain)| read_clip(dir, &id, domain))
        .collect::<Result<Vec<_>>>()?;
    let first = &clips[0];
    for c in &clips[1..] {
        if c.video.shape() != first.video.shape() || c.audio.shape() != first.audio.shape() {
            return Err(Error::Codec(format!("{}: clip {} has a different geometry", dir.display(), c.id)));
        }
    }
    Ok(Dataset { clips })
}
