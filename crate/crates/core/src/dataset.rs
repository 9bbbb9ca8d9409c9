//! Trajectory datasets: generation, the `GMRD` file format and manifests.
//!
//! Coordinates are not stored; cells are implicit normalized centers
//! `((i + ½) / nx, (j + ½) / ny)` of the grid given in the header.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array4;
use rayon::prelude::*;

use crate::basis::{coarsen, Domain};
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::gm::{SaturatedGMParams, ReactionSystem};
use crate::io::{expect_magic, read_f64, read_f64s, read_u16, read_u32, read_u64};
use crate::io::{write_f64s, write_u16, write_u32, write_u64};
use crate::solver::{initial_condition, simulate, trajectory_seed};

const GMRD_MAGIC: &[u8; 4] = b"GMRD";
const GMRD_VERSION: u16 = 1;

/// Full storage grid `{0, 1, …, 50, 100, 150, 200, 250}`.
pub fn dense_store_times() -> Vec<f64> {
    (0..=50).map(f64::from).chain([100.0, 150.0, 200.0, 250.0]).collect()
}

/// Thinned grid `{0, 5, …, 50, 100, 150, 200, 250}` (14 transitions).
pub fn desk_store_times() -> Vec<f64> {
    (0..=10).map(|k| 5.0 * k as f64).chain([100.0, 150.0, 200.0, 250.0]).collect()
}

/// What to generate.
#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub domain: Domain,
    pub regimes: Vec<f64>,
    pub train_per_regime: usize,
    pub test_per_regime: usize,
    pub noise: f64,
    pub seed: u64,
    pub store_times: Vec<f64>,
    pub dt: f64,
    /// Also store a 2× coarsened copy of every trajectory.
    pub multires: bool,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::Parameter("at least one regime is required".into()));
        }
        if self.train_per_regime + self.test_per_regime == 0 {
            return Err(Error::Parameter("per-regime trajectory count must be >= 1".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Parameter("noise amplitude must be >= 0".into()));
        }
        for &s in &self.regimes {
            SaturatedGMParams::new(s)?;
        }
        crate::field::check_nodes(&self.store_times)
    }

    pub fn per_regime(&self) -> usize {
        self.train_per_regime + self.test_per_regime
    }

    pub fn total(&self) -> usize {
        self.per_regime() * self.regimes.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub regime: f64,
    pub seed: u64,
    pub split: Split,
    pub diverged: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.csv";

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "file,regime,seed,split,diverged")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{}",
                e.file,
                e.regime,
                e.seed,
                e.split.as_str(),
                e.diverged
            )?;
        }
        Ok(())
    }

    /// Parses a manifest, skipping `#` comment lines.
    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        match lines.next() {
            Some("file,regime,seed,split,diverged") => {}
            other => return Err(Error::Format(format!("bad manifest header {other:?}"))),
        }
        let bad = |l: &str| Error::Format(format!("bad manifest row {l:?}"));
        let entries = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let cols: Vec<&str> = l.split(',').collect();
                if cols.len() != 5 {
                    return Err(bad(l));
                }
                Ok(ManifestEntry {
                    file: cols[0].to_string(),
                    regime: cols[1].parse().map_err(|_| bad(l))?,
                    seed: cols[2].parse().map_err(|_| bad(l))?,
                    split: Split::parse(cols[3])?,
                    diverged: cols[4].parse().map_err(|_| bad(l))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(dir.join(Self::FILE_NAME))?))
    }

    pub fn usable(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split && !e.diverged)
    }
}

/// A stored trajectory with its regime and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub s_eq: f64,
    pub seed: u64,
    pub field: SpaceTimeField,
}

pub fn write_gmrd<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    let f = &traj.field;
    let d = f.domain();
    w.write_all(GMRD_MAGIC)?;
    write_u16(&mut w, GMRD_VERSION)?;
    for v in [d.dim(), d.nx(), d.ny(), f.n_times(), f.channels()] {
        write_u32(&mut w, v as u32)?;
    }
    write_f64s(&mut w, [traj.s_eq])?;
    write_u64(&mut w, traj.seed)?;
    write_f64s(&mut w, f.times().iter().copied())?;
    write_f64s(&mut w, f.values().iter().copied())?;
    Ok(())
}

/// Reads a `GMRD` stream; `domain` supplies the physical lengths.
pub fn read_gmrd<R: Read>(mut r: R, domain: &Domain) -> Result<Trajectory> {
    expect_magic(&mut r, GMRD_MAGIC)?;
    let version = read_u16(&mut r)?;
    if version != GMRD_VERSION {
        return Err(Error::Format(format!("unsupported GMRD version {version}")));
    }
    let mut h = [0usize; 5];
    for v in &mut h {
        *v = read_u32(&mut r)? as usize;
    }
    let [dim, nx, ny, nt, ch] = h;
    if (dim, nx, ny) != (domain.dim(), domain.nx(), domain.ny()) {
        return Err(Error::Format(format!(
            "grid {dim}D {nx}x{ny} does not match the configured {}D {}x{}",
            domain.dim(),
            domain.nx(),
            domain.ny()
        )));
    }
    let s_eq = read_f64(&mut r)?;
    let seed = read_u64(&mut r)?;
    let times = read_f64s(&mut r, nt)?;
    let data = read_f64s(&mut r, nt * ch * ny * nx)?;
    let values = Array4::from_shape_vec((nt, ch, ny, nx), data)
        .map_err(|e| Error::Format(e.to_string()))?;
    let field = SpaceTimeField::new(domain.clone(), times, values)?;
    Ok(Trajectory { s_eq, seed, field })
}

pub fn load_trajectory(path: &Path, domain: &Domain) -> Result<Trajectory> {
    read_gmrd(BufReader::new(File::open(path)?), domain)
}

/// Regime index and split of global trajectory `index` (regimes round-robin).
pub fn assignment(spec: &DatasetSpec, index: usize) -> (usize, Split) {
    let r = index % spec.regimes.len();
    let within = index / spec.regimes.len();
    let split = if within < spec.train_per_regime {
        Split::Train
    } else {
        Split::Test
    };
    (r, split)
}

fn file_name(index: usize) -> String {
    format!("traj_{index:05}.gmrd")
}

/// Simulates every trajectory of `spec` into `out_dir` and writes the manifest.
pub fn gen_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    let entries: Vec<ManifestEntry> = (0..spec.total())
        .into_par_iter()
        .map(|index| generate_one(spec, out_dir, index))
        .collect::<Result<_>>()?;
    let manifest = Manifest { entries };
    let mut w = BufWriter::new(File::create(out_dir.join(Manifest::FILE_NAME))?);
    manifest.write(&mut w)?;
    w.flush()?;
    Ok(manifest)
}

fn generate_one(spec: &DatasetSpec, out_dir: &Path, index: usize) -> Result<ManifestEntry> {
    let (r, split) = assignment(spec, index);
    let s_eq = spec.regimes[r];
    let seed = trajectory_seed(spec.seed, index as u64);
    let ic = initial_condition(&spec.domain, s_eq, r, seed, spec.noise)?;
    let system = ReactionSystem::saturated(SaturatedGMParams::new(s_eq)?, 1)?;
    let file = file_name(index);
    let diverged = match simulate(&ic, &spec.domain, &system, spec.dt, &spec.store_times) {
        Ok(sim) => {
            let traj = Trajectory {
                s_eq,
                seed,
                field: sim.field,
            };
            write_to(&out_dir.join(&file), &traj)?;
            if spec.multires {
                write_to(&out_dir.join(coarse_name(&file)), &coarsened(&traj)?)?;
            }
            false
        }
        Err(Error::Divergence { .. }) => true,
        Err(e) => return Err(e),
    };
    Ok(ManifestEntry {
        file,
        regime: s_eq,
        seed,
        split,
        diverged,
    })
}

fn write_to(path: &PathBuf, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_gmrd(&mut w, traj)?;
    w.flush()?;
    Ok(())
}

/// File name of the coarsened copy of a trajectory.
pub fn coarse_name(file: &str) -> String {
    file.replace(".gmrd", "_coarse.gmrd")
}

fn coarsened(traj: &Trajectory) -> Result<Trajectory> {
    let f = &traj.field;
    let mut snaps = Vec::with_capacity(f.n_times());
    let mut coarse_domain = None;
    for k in 0..f.n_times() {
        let (d, s) = coarsen(f.domain(), f.snapshot(k))?;
        coarse_domain = Some(d);
        snaps.push(s);
    }
    let d = coarse_domain.expect("at least one node");
    Ok(Trajectory {
        s_eq: traj.s_eq,
        seed: traj.seed,
        field: SpaceTimeField::from_snapshots(&d, f.times().to_vec(), &snaps)?,
    })
}
