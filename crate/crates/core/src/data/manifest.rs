//! On-disk dataset layout and train/test splits.
//!
//! ```text
//! root/manifest.txt          "sample_0000 train" per line
//! root/sample_0000/meta.txt  key=value lines
//! root/sample_0000/allfocus.ppm, slice_00.ppm, .., gt.pgm
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{gen_synthetic_sample, pnm, LightFieldSample, SceneSpec};
use crate::error::{DlgError, Result};
use crate::tensor::{SeededRng, Tensor};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = DlgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(DlgError::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.id.as_str())
            .collect()
    }

    pub fn sample_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} {}\n", e.id, e.split))
            .collect()
    }

    pub fn write(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text()).map_err(|e| DlgError::io(path, e))
    }

    /// Read `root/manifest.txt` and check that every listed sample exists.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| DlgError::io(&path, e))?;
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        let mut offset = 0;
        for line in text.lines() {
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                let parse_err = |msg: String| DlgError::Parse {
                    what: path.display().to_string(),
                    offset,
                    msg,
                };
                let mut parts = trimmed.split_whitespace();
                let (id, split) = match (parts.next(), parts.next(), parts.next()) {
                    (Some(id), Some(split), None) => (id, split),
                    _ => {
                        return Err(parse_err(format!(
                            "expected '<id> <split>', got {trimmed:?}"
                        )))
                    }
                };
                let split = split
                    .parse()
                    .map_err(|e: DlgError| parse_err(e.to_string()))?;
                if !seen.insert(id.to_string()) {
                    return Err(parse_err(format!("duplicate sample id {id}")));
                }
                entries.push(ManifestEntry {
                    id: id.to_string(),
                    split,
                });
            }
            offset += line.len() + 1;
        }
        let manifest = Self {
            root: root.to_path_buf(),
            entries,
        };
        for e in &manifest.entries {
            let dir = manifest.sample_dir(&e.id);
            let meta = SampleMeta::read(&dir)?;
            for file in sample_files(meta.n_slices) {
                let p = dir.join(&file);
                if !p.is_file() {
                    return Err(DlgError::io(
                        p,
                        std::io::Error::from(std::io::ErrorKind::NotFound),
                    ));
                }
            }
        }
        Ok(manifest)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<LightFieldSample>> {
        self.ids(split)
            .into_iter()
            .map(|id| read_sample(&self.sample_dir(id)))
            .collect()
    }
}

fn sample_files(n: usize) -> Vec<String> {
    let mut files = vec!["allfocus.ppm".to_string(), "gt.pgm".to_string()];
    files.extend((0..n).map(|i| format!("slice_{i:02}.ppm")));
    files
}

/// Deterministic shuffle of `ids` into `n_train` training and `n_test` test
/// samples.
pub fn make_splits(
    root: &Path,
    ids: &[String],
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if n_train + n_test > ids.len() {
        return Err(DlgError::invalid(format!(
            "requested {n_train} train + {n_test} test samples but only {} exist",
            ids.len()
        )));
    }
    let unique: HashSet<_> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(DlgError::invalid("sample ids must be unique"));
    }
    let mut order = ids.to_vec();
    SeededRng::derive(seed, 0x5b11).shuffle(&mut order);
    let entries = order
        .into_iter()
        .take(n_train + n_test)
        .enumerate()
        .map(|(i, id)| ManifestEntry {
            id,
            split: if i < n_train {
                Split::Train
            } else {
                Split::Test
            },
        })
        .collect();
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        entries,
    })
}

/// Contents of `meta.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub n_slices: usize,
    pub depths: Vec<f64>,
    pub seed: u64,
    /// Remaining keys, kept verbatim.
    pub extra: BTreeMap<String, String>,
}

impl SampleMeta {
    pub fn from_spec(spec: &SceneSpec, seed: u64) -> Self {
        let mut extra = BTreeMap::new();
        extra.insert("height".into(), spec.height.to_string());
        extra.insert("width".into(), spec.width.to_string());
        extra.insert("fg_depth".into(), spec.fg_depth.to_string());
        extra.insert("bg_depth".into(), spec.bg_depth.to_string());
        extra.insert(
            "fg_center".into(),
            format!("{},{}", spec.fg_center.0, spec.fg_center.1),
        );
        extra.insert("fg_radius".into(), spec.fg_radius.to_string());
        extra.insert("blur_gain".into(), spec.blur_gain.to_string());
        extra.insert("texture_seed".into(), spec.texture_seed.to_string());
        Self {
            n_slices: spec.num_slices(),
            depths: spec.depth_planes.clone(),
            seed,
            extra,
        }
    }

    pub fn to_text(&self) -> String {
        let depths: Vec<String> = self.depths.iter().map(|d| d.to_string()).collect();
        let mut s = format!(
            "n_slices={}\ndepths={}\nseed={}\n",
            self.n_slices,
            depths.join(","),
            self.seed
        );
        for (k, v) in &self.extra {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn parse(text: &str, what: &str) -> Result<Self> {
        let mut n_slices = None;
        let mut depths = None;
        let mut seed = None;
        let mut extra = BTreeMap::new();
        let mut offset = 0;
        for line in text.lines() {
            let err = |msg: String| DlgError::Parse {
                what: what.to_string(),
                offset,
                msg,
            };
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                let (k, v) = t
                    .split_once('=')
                    .ok_or_else(|| err(format!("expected key=value, got {t:?}")))?;
                let (k, v) = (k.trim(), v.trim());
                match k {
                    "n_slices" => {
                        n_slices = Some(v.parse().map_err(|_| err(format!("bad n_slices {v:?}")))?)
                    }
                    "seed" => seed = Some(v.parse().map_err(|_| err(format!("bad seed {v:?}")))?),
                    "depths" => {
                        let parsed: std::result::Result<Vec<f64>, _> =
                            v.split(',').map(|d| d.trim().parse()).collect();
                        depths = Some(parsed.map_err(|_| err(format!("bad depths {v:?}")))?);
                    }
                    _ => {
                        extra.insert(k.to_string(), v.to_string());
                    }
                }
            }
            offset += line.len() + 1;
        }
        let missing = |k: &str| DlgError::Parse {
            what: what.to_string(),
            offset: text.len(),
            msg: format!("missing key {k}"),
        };
        let n_slices: usize = n_slices.ok_or_else(|| missing("n_slices"))?;
        let depths: Vec<f64> = depths.ok_or_else(|| missing("depths"))?;
        if n_slices == 0 || depths.len() != n_slices {
            return Err(DlgError::Parse {
                what: what.to_string(),
                offset: 0,
                msg: format!("n_slices={n_slices} but {} depths", depths.len()),
            });
        }
        Ok(Self {
            n_slices,
            depths,
            seed: seed.ok_or_else(|| missing("seed"))?,
            extra,
        })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| DlgError::io(&path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Write the images of `sample` into `dir` (created if missing) together
/// with `meta`.
pub fn write_sample(sample: &LightFieldSample, meta: &SampleMeta, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DlgError::io(dir, e))?;
    if meta.n_slices != sample.num_slices() {
        return Err(DlgError::invalid("meta.n_slices does not match the sample"));
    }
    pnm::write(&dir.join("allfocus.ppm"), &sample.allfocus)?;
    let (h, w) = (sample.height(), sample.width());
    for i in 0..sample.num_slices() {
        let slice = sample.slices.select_batch(&[i])?.reshape(&[3, h, w])?;
        pnm::write(&dir.join(format!("slice_{i:02}.ppm")), &slice)?;
    }
    pnm::write(&dir.join("gt.pgm"), &sample.gt)?;
    let path = dir.join("meta.txt");
    std::fs::write(&path, meta.to_text()).map_err(|e| DlgError::io(path, e))
}

pub fn read_sample(dir: &Path) -> Result<LightFieldSample> {
    let meta = SampleMeta::read(dir)?;
    let allfocus = pnm::read(&dir.join("allfocus.ppm"))?;
    let mut slices = Vec::with_capacity(meta.n_slices);
    for i in 0..meta.n_slices {
        let s = pnm::read(&dir.join(format!("slice_{i:02}.ppm")))?;
        let shape = s.shape().to_vec();
        slices.push(s.reshape(&[1, shape[0], shape[1], shape[2]])?);
    }
    let refs: Vec<&Tensor> = slices.iter().collect();
    let gt_path = dir.join("gt.pgm");
    let gt = pnm::read(&gt_path)?;
    if !gt.data().iter().all(|&v| v == 0.0 || v == 1.0) {
        return Err(DlgError::invalid(format!(
            "{} is not binary",
            gt_path.display()
        )));
    }
    LightFieldSample::new(allfocus, Tensor::cat_batch(&refs)?, gt)
}

/// Generate `count` random scenes under `root` and split them.
#[derive(Clone, Debug, PartialEq)]
pub struct GenOptions {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub min_slices: usize,
    pub max_slices: usize,
    pub blur_gain: f64,
    pub n_train: usize,
    pub n_test: usize,
}

pub fn generate_dataset(root: &Path, opts: &GenOptions, seed: u64) -> Result<DatasetManifest> {
    if opts.min_slices == 0 || opts.min_slices > opts.max_slices {
        return Err(DlgError::invalid("need 1 <= min_slices <= max_slices"));
    }
    std::fs::create_dir_all(root).map_err(|e| DlgError::io(root, e))?;
    let mut ids = Vec::with_capacity(opts.count);
    for i in 0..opts.count {
        let sample_seed = SeededRng::derive(seed, i as u64).next_u64();
        let mut rng = SeededRng::new(sample_seed);
        let n = opts.min_slices + rng.below(opts.max_slices - opts.min_slices + 1);
        let spec = SceneSpec::random(opts.height, opts.width, n, opts.blur_gain, &mut rng);
        let sample = gen_synthetic_sample(&spec, &mut rng)?;
        let id = format!("sample_{i:04}");
        write_sample(
            &sample,
            &SampleMeta::from_spec(&spec, sample_seed),
            &root.join(&id),
        )?;
        ids.push(id);
    }
    let manifest = make_splits(root, &ids, opts.n_train, opts.n_test, seed)?;
    manifest.write()?;
    Ok(manifest)
}
