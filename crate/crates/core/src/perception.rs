//! Frozen perceptual front end.
//!
//! Agents never see objects directly; they see a [`Percept`] — a fixed
//! continuous feature vector per view. The synthetic map sums per-attribute
//! codebook vectors (each scaled by a configurable gain), a nuisance
//! embedding, and view-keyed noise, then pushes the sum through one fixed
//! random affine map and a saturating nonlinearity. The gains control how
//! salient each attribute is to downstream learners; a larger color gain
//! gives the front end an innate color tendency.
//!
//! Nothing here ever updates during training, and percepts can instead be
//! loaded from a feature file produced by any external encoder
//! (see [`import_features`]).

use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::rngutil::{mix, normal, stream, tag};
use crate::worldgen::{ViewInstance, WorldConfig};

#[derive(Debug, thiserror::Error)]
pub enum PerceptionError {
    #[error("feature_dim must be at least 8, got {0}")]
    FeatureDimTooSmall(usize),
    #[error("gains and noise_std must be non-negative")]
    NegativeParameter,
    #[error("attribute index out of codebook range: {attribute} id {id} >= {count}")]
    AttributeOutOfRange { attribute: &'static str, id: usize, count: usize },
    #[error("missing key: no stored features for object {object_id}, view_seed {view_seed}")]
    MissingKey { object_id: usize, view_seed: u64 },
    #[error("dimension mismatch in {path}: entry {entry} has {got} features, expected {expected}")]
    DimensionMismatch { path: PathBuf, entry: usize, got: usize, expected: usize },
    #[error("malformed feature file {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionConfig {
    pub feature_dim: usize,
    pub color_gain: f32,
    pub shape_gain: f32,
    pub material_gain: f32,
    pub size_gain: f32,
    pub nuisance_gain: f32,
    pub noise_std: f32,
    pub mixing_seed: u64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            feature_dim: 128,
            color_gain: 2.0,
            shape_gain: 1.0,
            material_gain: 1.0,
            size_gain: 1.0,
            nuisance_gain: 0.5,
            noise_std: 0.05,
            mixing_seed: 0,
        }
    }
}

impl PerceptionConfig {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        if self.feature_dim < 8 {
            return Err(PerceptionError::FeatureDimTooSmall(self.feature_dim));
        }
        let gains = [
            self.color_gain,
            self.shape_gain,
            self.material_gain,
            self.size_gain,
            self.nuisance_gain,
            self.noise_std,
        ];
        if gains.iter().any(|&g| g < 0.0 || !g.is_finite()) {
            return Err(PerceptionError::NegativeParameter);
        }
        Ok(())
    }
}

/// The feature vector an agent receives for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct Percept {
    pub features: Vec<f32>,
}

struct Synthetic {
    cfg: PerceptionConfig,
    world: WorldConfig,
    /// Codebooks already scaled by their gains; rows are `feature_dim` wide.
    shape_cb: Vec<Vec<f32>>,
    color_cb: Vec<Vec<f32>>,
    material_cb: Vec<Vec<f32>>,
    size_cb: Vec<Vec<f32>>,
    /// `feature_dim x 4` projection of `(pos_x, pos_y, sin light, cos light)`.
    nuisance_proj: Vec<f32>,
    /// Fixed affine mix: `feature_dim x feature_dim` plus a bias row.
    mix_w: Vec<f32>,
    mix_b: Vec<f32>,
}

struct Imported {
    dim: usize,
    table: HashMap<(usize, u64), Vec<f32>>,
    world: WorldConfig,
}

enum Inner {
    Synthetic(Synthetic),
    Imported(Imported),
}

/// A perception map frozen at construction time.
pub struct FrozenPerception {
    inner: Inner,
}

fn gaussian_vec(dim: usize, scale: f32, rng: &mut impl rand::Rng) -> Vec<f32> {
    let k = scale / (dim as f32).sqrt();
    (0..dim).map(|_| normal(rng) as f32 * k).collect()
}

/// Per-dimension scale of the nuisance projection rows.
const NUISANCE_PROJ_STD: f32 = 2.0;
/// Gain of the fixed affine mix; larger values push the saturating
/// nonlinearity deeper into its clipping regime.
const MIX_GAIN: f32 = 3.0;

/// Build the synthetic frozen map for a world. All parameters derive from
/// `cfg.mixing_seed`, so equal configs give bit-identical percepts.
pub fn init_perception(
    cfg: &PerceptionConfig,
    world: &WorldConfig,
) -> Result<FrozenPerception, PerceptionError> {
    init_perception_scaled(cfg, world, NUISANCE_PROJ_STD, MIX_GAIN)
}

fn init_perception_scaled(
    cfg: &PerceptionConfig,
    world: &WorldConfig,
    nuisance_proj_std: f32,
    mix_gain: f32,
) -> Result<FrozenPerception, PerceptionError> {
    cfg.validate()?;
    let d = cfg.feature_dim;
    let codebook = |attr: &str, count: usize, gain: f32| -> Vec<Vec<f32>> {
        (0..count)
            .map(|i| {
                let mut rng = stream(cfg.mixing_seed, "codebook", &[tag(attr), i as u64]);
                gaussian_vec(d, gain, &mut rng)
            })
            .collect()
    };
    let shape_cb = codebook("shape", world.n_shapes, cfg.shape_gain);
    let color_cb = codebook("color", world.n_colors, cfg.color_gain);
    let material_cb = codebook("material", world.n_materials, cfg.material_gain);
    let size_cb = codebook("size", world.n_sizes, cfg.size_gain);

    let mut rng = stream(cfg.mixing_seed, "nuisance-proj", &[]);
    let nuisance_proj: Vec<f32> =
        (0..d * 4).map(|_| normal(&mut rng) as f32 * nuisance_proj_std).collect();

    let mut rng = stream(cfg.mixing_seed, "mix", &[]);
    let k = mix_gain / (d as f32).sqrt();
    let mix_w: Vec<f32> = (0..d * d).map(|_| normal(&mut rng) as f32 * k).collect();
    let mix_b: Vec<f32> = (0..d).map(|_| normal(&mut rng) as f32 * 0.1).collect();

    Ok(FrozenPerception {
        inner: Inner::Synthetic(Synthetic {
            cfg: cfg.clone(),
            world: world.clone(),
            shape_cb,
            color_cb,
            material_cb,
            size_cb,
            nuisance_proj,
            mix_w,
            mix_b,
        }),
    })
}

impl FrozenPerception {
    pub fn feature_dim(&self) -> usize {
        match &self.inner {
            Inner::Synthetic(s) => s.cfg.feature_dim,
            Inner::Imported(i) => i.dim,
        }
    }

    pub fn world(&self) -> &WorldConfig {
        match &self.inner {
            Inner::Synthetic(s) => &s.world,
            Inner::Imported(i) => &i.world,
        }
    }

    /// Map a view to its percept. Pure: the same view always yields the
    /// bit-identical vector.
    pub fn perceive(&self, view: &ViewInstance) -> Result<Percept, PerceptionError> {
        match &self.inner {
            Inner::Synthetic(s) => s.perceive(view),
            Inner::Imported(i) => {
                let object_id = view.object.object_id(&i.world);
                i.table
                    .get(&(object_id, view.view_seed))
                    .map(|f| Percept { features: f.clone() })
                    .ok_or(PerceptionError::MissingKey { object_id, view_seed: view.view_seed })
            }
        }
    }

    /// Fingerprint of every frozen parameter (or stored row); training must
    /// leave this unchanged.
    pub fn checksum(&self) -> u64 {
        fn feed(h: &mut u64, xs: &[f32]) {
            for &x in xs {
                *h ^= u64::from(x.to_bits());
                *h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        match &self.inner {
            Inner::Synthetic(s) => {
                for cb in [&s.shape_cb, &s.color_cb, &s.material_cb, &s.size_cb] {
                    for row in cb {
                        feed(&mut h, row);
                    }
                }
                feed(&mut h, &s.nuisance_proj);
                feed(&mut h, &s.mix_w);
                feed(&mut h, &s.mix_b);
            }
            Inner::Imported(i) => {
                let mut keys: Vec<_> = i.table.keys().copied().collect();
                keys.sort_unstable();
                for k in keys {
                    h ^= mix(&[k.0 as u64, k.1]);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                    feed(&mut h, &i.table[&k]);
                }
            }
        }
        h
    }

    /// Write the map's output for `views` in the documented feature-file
    /// format (CSV when `path` ends in `.csv`, binary otherwise).
    pub fn export_features(
        &self,
        path: &Path,
        views: &[ViewInstance],
    ) -> Result<(), PerceptionError> {
        let io_err = |source| PerceptionError::Io { path: path.to_path_buf(), source };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        let world = self.world().clone();
        writeln!(w, "object_id,view_seed,dim").map_err(io_err)?;
        let csv = is_csv(path);
        for v in views {
            let p = self.perceive(v)?;
            let oid = v.object.object_id(&world);
            if csv {
                let mut line = format!("{},{},{}", oid, v.view_seed, p.features.len());
                for f in &p.features {
                    line.push(',');
                    line.push_str(&format!("{}", f));
                }
                writeln!(w, "{}", line).map_err(io_err)?;
            } else {
                w.write_all(&(oid as u32).to_le_bytes()).map_err(io_err)?;
                w.write_all(&v.view_seed.to_le_bytes()).map_err(io_err)?;
                w.write_all(&(p.features.len() as u32).to_le_bytes()).map_err(io_err)?;
                for f in &p.features {
                    w.write_all(&f.to_le_bytes()).map_err(io_err)?;
                }
            }
        }
        Ok(())
    }
}

impl Synthetic {
    fn perceive(&self, view: &ViewInstance) -> Result<Percept, PerceptionError> {
        let d = self.cfg.feature_dim;
        let obj = view.object;
        let lookup = |attribute: &'static str,
                      cb: &[Vec<f32>],
                      id: usize|
         -> Result<(), PerceptionError> {
            if id >= cb.len() {
                Err(PerceptionError::AttributeOutOfRange { attribute, id, count: cb.len() })
            } else {
                Ok(())
            }
        };
        lookup("shape", &self.shape_cb, obj.shape_id as usize)?;
        lookup("color", &self.color_cb, obj.color_id as usize)?;
        lookup("material", &self.material_cb, obj.material_id as usize)?;
        lookup("size", &self.size_cb, obj.size_id as usize)?;

        let mut raw = vec![0.0f32; d];
        for (dst, src) in raw.iter_mut().zip(&self.shape_cb[obj.shape_id as usize]) {
            *dst += src;
        }
        for (dst, src) in raw.iter_mut().zip(&self.color_cb[obj.color_id as usize]) {
            *dst += src;
        }
        for (dst, src) in raw.iter_mut().zip(&self.material_cb[obj.material_id as usize]) {
            *dst += src;
        }
        for (dst, src) in raw.iter_mut().zip(&self.size_cb[obj.size_id as usize]) {
            *dst += src;
        }

        let nu = [
            view.nuisance[0],
            view.nuisance[1],
            view.nuisance[2].sin(),
            view.nuisance[2].cos(),
        ];
        for (i, dst) in raw.iter_mut().enumerate() {
            let row = &self.nuisance_proj[i * 4..(i + 1) * 4];
            let e: f32 = row.iter().zip(&nu).map(|(a, b)| a * b).sum();
            *dst += self.cfg.nuisance_gain * e;
        }

        if self.cfg.noise_std > 0.0 {
            let mut rng = stream(self.cfg.mixing_seed, "view-noise", &[view.view_seed]);
            for dst in raw.iter_mut() {
                *dst += normal(&mut rng) as f32 * self.cfg.noise_std;
            }
        }

        let mut features = vec![0.0f32; d];
        for (i, out) in features.iter_mut().enumerate() {
            let row = &self.mix_w[i * d..(i + 1) * d];
            let s: f32 = row.iter().zip(&raw).map(|(a, b)| a * b).sum();
            *out = (s + self.mix_b[i]).tanh();
        }
        Ok(Percept { features })
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().map(|e| e.eq_ignore_ascii_case("csv")).unwrap_or(false)
}

/// Load percepts from a feature file. The file starts with the header line
/// `object_id,view_seed,dim`; rows are either CSV
/// (`object_id,view_seed,dim,f0,...`) for `.csv` paths or packed binary
/// records (u32 object_id, u64 view_seed, u32 dim, dim little-endian f32)
/// for any other extension.
pub fn import_features(path: &Path, world: &WorldConfig) -> Result<FrozenPerception, PerceptionError> {
    let io_err = |source| PerceptionError::Io { path: path.to_path_buf(), source };
    let malformed = |detail: String| PerceptionError::Malformed { path: path.to_path_buf(), detail };

    let bytes = std::fs::read(path).map_err(io_err)?;
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|e| malformed(format!("non-utf8 header: {e}")))?
        .trim_end_matches('\r');
    if header != "object_id,view_seed,dim" {
        return Err(malformed(format!("unexpected header `{header}`")));
    }

    let mut table: HashMap<(usize, u64), Vec<f32>> = HashMap::new();
    let mut dim: Option<usize> = None;
    let mut entry = 0usize;

    if is_csv(path) {
        for line in bytes[header_end + 1..].lines() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut next = |what: &str| {
                parts
                    .next()
                    .ok_or_else(|| malformed(format!("entry {entry}: missing {what}")))
            };
            let oid: usize = next("object_id")?
                .parse()
                .map_err(|e| malformed(format!("entry {entry}: bad object_id: {e}")))?;
            let vs: u64 = next("view_seed")?
                .parse()
                .map_err(|e| malformed(format!("entry {entry}: bad view_seed: {e}")))?;
            let d: usize = next("dim")?
                .parse()
                .map_err(|e| malformed(format!("entry {entry}: bad dim: {e}")))?;
            let feats: Vec<f32> = parts
                .map(|p| p.parse::<f32>())
                .collect::<Result<_, _>>()
                .map_err(|e| malformed(format!("entry {entry}: bad feature: {e}")))?;
            if feats.len() != d {
                return Err(malformed(format!(
                    "entry {entry}: row declares dim {d} but carries {} features",
                    feats.len()
                )));
            }
            check_dim(path, &mut dim, d, entry)?;
            table.insert((oid, vs), feats);
            entry += 1;
        }
    } else {
        let mut cur = &bytes[header_end + 1..];
        while !cur.is_empty() {
            if cur.len() < 16 {
                return Err(malformed(format!("entry {entry}: truncated record header")));
            }
            let mut u32buf = [0u8; 4];
            let mut u64buf = [0u8; 8];
            cur.read_exact(&mut u32buf).map_err(io_err)?;
            let oid = u32::from_le_bytes(u32buf) as usize;
            cur.read_exact(&mut u64buf).map_err(io_err)?;
            let vs = u64::from_le_bytes(u64buf);
            cur.read_exact(&mut u32buf).map_err(io_err)?;
            let d = u32::from_le_bytes(u32buf) as usize;
            if cur.len() < d * 4 {
                return Err(malformed(format!("entry {entry}: truncated feature block")));
            }
            let mut feats = Vec::with_capacity(d);
            for _ in 0..d {
                cur.read_exact(&mut u32buf).map_err(io_err)?;
                feats.push(f32::from_le_bytes(u32buf));
            }
            check_dim(path, &mut dim, d, entry)?;
            table.insert((oid, vs), feats);
            entry += 1;
        }
    }

    let dim = dim.ok_or_else(|| malformed("file contains no feature rows".into()))?;
    Ok(FrozenPerception { inner: Inner::Imported(Imported { dim, table, world: world.clone() }) })
}

fn check_dim(
    path: &Path,
    dim: &mut Option<usize>,
    d: usize,
    entry: usize,
) -> Result<(), PerceptionError> {
    match *dim {
        None => {
            *dim = Some(d);
            Ok(())
        }
        Some(expected) if expected == d => Ok(()),
        Some(expected) => Err(PerceptionError::DimensionMismatch {
            path: path.to_path_buf(),
            entry,
            got: d,
            expected,
        }),
    }
}

/// Percepts for a fixed set of views, keyed by `(object_id, view_seed)`.
/// Built once per run so training batches are table lookups.
pub struct PerceptTable {
    dim: usize,
    map: HashMap<(usize, u64), Vec<f32>>,
    world: WorldConfig,
}

impl PerceptTable {
    pub fn build<'a>(
        perception: &FrozenPerception,
        views: impl IntoIterator<Item = &'a ViewInstance>,
    ) -> Result<PerceptTable, PerceptionError> {
        let world = perception.world().clone();
        let mut map = HashMap::new();
        for v in views {
            let p = perception.perceive(v)?;
            map.insert((v.object.object_id(&world), v.view_seed), p.features);
        }
        Ok(PerceptTable { dim: perception.feature_dim(), map, world })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, view: &ViewInstance) -> Result<&[f32], PerceptionError> {
        let object_id = view.object.object_id(&self.world);
        self.map
            .get(&(object_id, view.view_seed))
            .map(|v| v.as_slice())
            .ok_or(PerceptionError::MissingKey { object_id, view_seed: view.view_seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{holdout_accuracy, ProbeConfig};
    use crate::worldgen::{enumerate_objects, sample_view};

    fn world() -> WorldConfig {
        WorldConfig::default()
    }

    fn percept_cfg(dim: usize) -> PerceptionConfig {
        PerceptionConfig { feature_dim: dim, mixing_seed: 5, ..PerceptionConfig::default() }
    }

    #[test]
    fn init_is_deterministic() {
        let w = world();
        let cfg = percept_cfg(32);
        let a = init_perception(&cfg, &w).unwrap();
        let b = init_perception(&cfg, &w).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        let mut cfg2 = cfg.clone();
        cfg2.mixing_seed = 6;
        let c = init_perception(&cfg2, &w).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn perceive_is_bit_identical() {
        let w = world();
        let p = init_perception(&percept_cfg(32), &w).unwrap();
        let view = sample_view(&w, enumerate_objects(&w)[17], 3);
        assert_eq!(p.perceive(&view).unwrap(), p.perceive(&view).unwrap());
    }

    #[test]
    fn zero_color_gain_erases_color() {
        let w = world();
        let cfg = PerceptionConfig {
            feature_dim: 32,
            color_gain: 0.0,
            noise_std: 0.0,
            mixing_seed: 5,
            ..PerceptionConfig::default()
        };
        let p = init_perception(&cfg, &w).unwrap();
        let objects = enumerate_objects(&w);
        // Objects 0 and 4 differ only in color (color-major stride is 4).
        assert_eq!(objects[0].shape_id, objects[4].shape_id);
        assert_ne!(objects[0].color_id, objects[4].color_id);
        let a = p.perceive(&sample_view(&w, objects[0], 9)).unwrap();
        // Same view seed so the nuisance differs; rebuild view for object 4
        // with the identical nuisance by copying it over.
        let mut v = sample_view(&w, objects[4], 9);
        v.nuisance = sample_view(&w, objects[0], 9).nuisance;
        let b = p.perceive(&v).unwrap();
        for (x, y) in a.features.iter().zip(&b.features) {
            assert!((x - y).abs() < 1e-6, "color leaked: {} vs {}", x, y);
        }
    }

    #[test]
    fn zero_nuisance_and_noise_collapse_views() {
        let w = world();
        let cfg = PerceptionConfig {
            feature_dim: 32,
            nuisance_gain: 0.0,
            noise_std: 0.0,
            mixing_seed: 5,
            ..PerceptionConfig::default()
        };
        let p = init_perception(&cfg, &w).unwrap();
        let obj = enumerate_objects(&w)[100];
        let a = p.perceive(&sample_view(&w, obj, 1)).unwrap();
        let b = p.perceive(&sample_view(&w, obj, 2)).unwrap();
        assert_eq!(a, b);
    }

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64) * (y as f64)).sum();
        let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn same_object_views_are_more_similar() {
        let w = world();
        let p = init_perception(&percept_cfg(64), &w).unwrap();
        let objects = enumerate_objects(&w);
        let mut rng = crate::rngutil::stream(3, "cosine-test", &[]);
        let mut same = 0.0;
        let mut diff = 0.0;
        let n = 1_000;
        for i in 0..n {
            use rand::Rng;
            let oa = rng.random_range(0..objects.len());
            let mut ob = rng.random_range(0..objects.len() - 1);
            if ob >= oa {
                ob += 1;
            }
            let va = p.perceive(&sample_view(&w, objects[oa], 2 * i)).unwrap();
            let va2 = p.perceive(&sample_view(&w, objects[oa], 2 * i + 1)).unwrap();
            let vb = p.perceive(&sample_view(&w, objects[ob], 2 * i + 1)).unwrap();
            same += cosine(&va.features, &va2.features);
            diff += cosine(&va.features, &vb.features);
        }
        assert!(
            same / n as f64 > diff / n as f64,
            "same-object similarity {} <= cross-object {}",
            same / n as f64,
            diff / n as f64
        );
    }

    #[test]
    fn no_nan_across_many_views() {
        let w = world();
        let p = init_perception(&percept_cfg(64), &w).unwrap();
        let objects = enumerate_objects(&w);
        for vs in 0..10_000u64 {
            let obj = objects[(vs % objects.len() as u64) as usize];
            let pct = p.perceive(&sample_view(&w, obj, vs)).unwrap();
            assert!(pct.features.iter().all(|f| f.is_finite()), "non-finite at {}", vs);
        }
    }

    fn probe_rows(
        p: &FrozenPerception,
        w: &WorldConfig,
        n: usize,
    ) -> (Vec<Vec<f32>>, Vec<usize>, Vec<usize>) {
        let objects = enumerate_objects(w);
        let mut rows = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        let mut shapes = Vec::with_capacity(n);
        for i in 0..n {
            let obj = objects[i % objects.len()];
            let view = sample_view(w, obj, i as u64);
            rows.push(p.perceive(&view).unwrap().features);
            colors.push(obj.color_id as usize);
            shapes.push(obj.shape_id as usize);
        }
        (rows, colors, shapes)
    }

    #[test]
    fn default_gains_make_color_more_decodable_than_shape() {
        let w = world();
        let p = init_perception(&percept_cfg(64), &w).unwrap();
        let (rows, colors, shapes) = probe_rows(&p, &w, 2_000);
        let pc = ProbeConfig::default();
        let color_acc = holdout_accuracy(&rows, &colors, w.n_colors, &pc);
        let shape_acc = holdout_accuracy(&rows, &shapes, w.n_shapes, &pc);
        assert!(
            color_acc > shape_acc,
            "color probe {} <= shape probe {}",
            color_acc,
            shape_acc
        );
    }

    #[test]
    fn color_probe_accuracy_grows_with_color_gain() {
        let w = world();
        let pc = ProbeConfig::default();
        let mut last = -1.0;
        for gain in [0.0f32, 1.0, 3.0] {
            let cfg = PerceptionConfig {
                feature_dim: 64,
                color_gain: gain,
                mixing_seed: 5,
                ..PerceptionConfig::default()
            };
            let p = init_perception(&cfg, &w).unwrap();
            let (rows, colors, _) = probe_rows(&p, &w, 1_500);
            let acc = holdout_accuracy(&rows, &colors, w.n_colors, &pc);
            assert!(
                acc >= last - 0.02,
                "color accuracy dropped from {} to {} at gain {}",
                last,
                acc,
                gain
            );
            last = acc;
        }
    }

    #[test]
    fn feature_file_roundtrip_binary_and_csv() {
        let w = world();
        let p = init_perception(&percept_cfg(16), &w).unwrap();
        let objects = enumerate_objects(&w);
        let views: Vec<ViewInstance> =
            (0..50).map(|i| sample_view(&w, objects[i % objects.len()], i as u64)).collect();
        let dir = tempfile::tempdir().unwrap();
        for name in ["feats.bin", "feats.csv"] {
            let path = dir.path().join(name);
            p.export_features(&path, &views).unwrap();
            let imported = import_features(&path, &w).unwrap();
            for v in &views {
                let orig = p.perceive(v).unwrap();
                let got = imported.perceive(v).unwrap();
                for (a, b) in orig.features.iter().zip(&got.features) {
                    assert!((a - b).abs() <= f32::EPSILON * a.abs().max(1.0), "{} vs {}", a, b);
                }
            }
        }
    }

    #[test]
    fn missing_key_is_an_error() {
        let w = world();
        let p = init_perception(&percept_cfg(16), &w).unwrap();
        let objects = enumerate_objects(&w);
        let views: Vec<ViewInstance> = (0..5).map(|i| sample_view(&w, objects[0], i)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feats.bin");
        p.export_features(&path, &views).unwrap();
        let imported = import_features(&path, &w).unwrap();
        let unlisted = sample_view(&w, objects[0], 99);
        match imported.perceive(&unlisted) {
            Err(PerceptionError::MissingKey { view_seed: 99, .. }) => {}
            other => panic!("expected MissingKey, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn malformed_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feats.csv");
        std::fs::write(&path, "object_id,view_seed,dim\n1,2,4,0.5,0.5\n").unwrap();
        match import_features(&path, &world()) {
            Err(PerceptionError::Malformed { .. }) => {}
            other => panic!("expected Malformed, got {:?}", other.map(|_| ())),
        }
    }
}
