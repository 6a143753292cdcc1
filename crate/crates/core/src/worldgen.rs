//! The discrete object space and its view splits.
//!
//! Objects are tuples over four categorical attributes. Every "image" is a
//! [`ViewInstance`]: an object plus continuous nuisance (2-D position and a
//! lighting angle) derived deterministically from an integer `view_seed`.
//! Splits never materialize pixel data; they are just reproducible
//! assignments of view seeds to objects.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rngutil::{mix, stream};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WorldError {
    #[error("attribute counts must all be at least 1, got {0:?}")]
    EmptyAttribute([usize; 4]),
    #[error("{split} split needs at least {objects} views (one per object), got {views}")]
    SplitTooSmall { split: &'static str, objects: usize, views: usize },
}

/// Bounds for the continuous nuisance coordinates. Positions are uniform per
/// axis; the lighting angle is uniform over `[0, 2pi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    pub pos_min: f32,
    pub pos_max: f32,
}

impl Default for NuisanceSpec {
    fn default() -> Self {
        NuisanceSpec { pos_min: -1.0, pos_max: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_shapes: usize,
    pub n_colors: usize,
    pub n_materials: usize,
    pub n_sizes: usize,
    pub train_views: usize,
    pub test_views: usize,
    #[serde(default)]
    pub nuisance: NuisanceSpec,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_shapes: 10,
            n_colors: 8,
            n_materials: 2,
            n_sizes: 2,
            train_views: 6_400,
            test_views: 3_200,
            nuisance: NuisanceSpec::default(),
        }
    }
}

impl WorldConfig {
    pub fn object_count(&self) -> usize {
        self.n_shapes * self.n_colors * self.n_materials * self.n_sizes
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let counts = [self.n_shapes, self.n_colors, self.n_materials, self.n_sizes];
        if counts.iter().any(|&c| c == 0) {
            return Err(WorldError::EmptyAttribute(counts));
        }
        Ok(())
    }
}

/// One point of the discrete object space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape_id: u16,
    pub color_id: u16,
    pub material_id: u16,
    pub size_id: u16,
}

impl ObjectSpec {
    /// Lexicographic index (shape-major) of this object.
    pub fn object_id(&self, cfg: &WorldConfig) -> usize {
        (((self.shape_id as usize * cfg.n_colors + self.color_id as usize) * cfg.n_materials
            + self.material_id as usize)
            * cfg.n_sizes)
            + self.size_id as usize
    }

    pub fn from_id(cfg: &WorldConfig, id: usize) -> ObjectSpec {
        debug_assert!(id < cfg.object_count());
        let size_id = (id % cfg.n_sizes) as u16;
        let rest = id / cfg.n_sizes;
        let material_id = (rest % cfg.n_materials) as u16;
        let rest = rest / cfg.n_materials;
        let color_id = (rest % cfg.n_colors) as u16;
        let shape_id = (rest / cfg.n_colors) as u16;
        ObjectSpec { shape_id, color_id, material_id, size_id }
    }
}

/// A concrete "image": an object under nuisance sampled from its view seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewInstance {
    pub object: ObjectSpec,
    /// `(pos_x, pos_y, light_angle)`.
    pub nuisance: [f32; 3],
    pub view_seed: u64,
}

/// All objects in deterministic lexicographic order
/// (shape, color, material, size).
pub fn enumerate_objects(cfg: &WorldConfig) -> Vec<ObjectSpec> {
    let mut out = Vec::with_capacity(cfg.object_count());
    for shape in 0..cfg.n_shapes {
        for color in 0..cfg.n_colors {
            for material in 0..cfg.n_materials {
                for size in 0..cfg.n_sizes {
                    out.push(ObjectSpec {
                        shape_id: shape as u16,
                        color_id: color as u16,
                        material_id: material as u16,
                        size_id: size as u16,
                    });
                }
            }
        }
    }
    out
}

/// Realize the view of `obj` indexed by `view_seed`. Nuisance is a pure
/// function of the pair, so the same view can be regenerated anywhere.
pub fn sample_view(cfg: &WorldConfig, obj: ObjectSpec, view_seed: u64) -> ViewInstance {
    let key = mix(&[
        obj.shape_id as u64,
        obj.color_id as u64,
        obj.material_id as u64,
        obj.size_id as u64,
    ]);
    let mut rng = stream(key, "view-nuisance", &[view_seed]);
    let span = cfg.nuisance.pos_max - cfg.nuisance.pos_min;
    let pos_x = cfg.nuisance.pos_min + rng.random::<f32>() * span;
    let pos_y = cfg.nuisance.pos_min + rng.random::<f32>() * span;
    let light = rng.random::<f32>() * std::f32::consts::TAU;
    ViewInstance { object: obj, nuisance: [pos_x, pos_y, light], view_seed }
}

/// A reproducible set of views with a per-object index.
#[derive(Clone, Debug)]
pub struct Split {
    views: Vec<ViewInstance>,
    by_object: Vec<Vec<u32>>,
}

impl Split {
    pub fn views(&self) -> &[ViewInstance] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn views_of(&self, object_id: usize) -> &[u32] {
        &self.by_object[object_id]
    }

    /// A uniformly drawn view of the given object.
    pub fn view_of<R: Rng>(&self, object_id: usize, rng: &mut R) -> ViewInstance {
        let ids = &self.by_object[object_id];
        self.views[ids[rng.random_range(0..ids.len())] as usize]
    }

    /// Two views of the object with distinct view seeds.
    pub fn two_views_of<R: Rng>(
        &self,
        object_id: usize,
        rng: &mut R,
    ) -> (ViewInstance, ViewInstance) {
        let ids = &self.by_object[object_id];
        assert!(ids.len() >= 2, "object {} has {} view(s), need 2", object_id, ids.len());
        let a = rng.random_range(0..ids.len());
        let mut b = rng.random_range(0..ids.len() - 1);
        if b >= a {
            b += 1;
        }
        (self.views[ids[a] as usize], self.views[ids[b] as usize])
    }
}

/// Build the train and test splits.
///
/// Views are spread as evenly as possible over objects; each object's pool
/// of view seeds is shuffled (keyed by `seed`) before being cut into a train
/// part and a test part, so no seed appears in both splits.
pub fn make_splits(cfg: &WorldConfig, seed: u64) -> Result<(Split, Split), WorldError> {
    cfg.validate()?;
    let objects = enumerate_objects(cfg);
    let n = objects.len();
    if cfg.train_views < n {
        return Err(WorldError::SplitTooSmall { split: "train", objects: n, views: cfg.train_views });
    }
    if cfg.test_views < n {
        return Err(WorldError::SplitTooSmall { split: "test", objects: n, views: cfg.test_views });
    }

    let mut train =
        Split { views: Vec::with_capacity(cfg.train_views), by_object: vec![Vec::new(); n] };
    let mut test =
        Split { views: Vec::with_capacity(cfg.test_views), by_object: vec![Vec::new(); n] };

    let mut next_seed: u64 = 0;
    for (oid, obj) in objects.iter().enumerate() {
        let n_train = per_object(cfg.train_views, n, oid);
        let n_test = per_object(cfg.test_views, n, oid);
        let mut pool: Vec<u64> = (0..(n_train + n_test) as u64).map(|i| next_seed + i).collect();
        next_seed += (n_train + n_test) as u64;

        let mut rng = stream(seed, "split-assign", &[oid as u64]);
        // Fisher-Yates; which seeds land in train depends on `seed`.
        for i in (1..pool.len()).rev() {
            pool.swap(i, rng.random_range(0..=i));
        }
        for (i, &vs) in pool.iter().enumerate() {
            let view = sample_view(cfg, *obj, vs);
            let dst = if i < n_train { &mut train } else { &mut test };
            dst.by_object[oid].push(dst.views.len() as u32);
            dst.views.push(view);
        }
    }
    Ok((train, test))
}

/// Even allocation of `total` views over `objects`, remainder to the lowest
/// object ids.
fn per_object(total: usize, objects: usize, object_id: usize) -> usize {
    total / objects + usize::from(object_id < total % objects)
}

/// Export splits as CSV rows
/// (`object_id,shape_id,color_id,material_id,size_id,view_seed,pos_x,pos_y,light_angle,split`).
pub fn write_split_csv<W: std::io::Write>(
    out: &mut W,
    cfg: &WorldConfig,
    splits: &[(&Split, &str)],
) -> std::io::Result<()> {
    writeln!(
        out,
        "object_id,shape_id,color_id,material_id,size_id,view_seed,pos_x,pos_y,light_angle,split"
    )?;
    for (split, name) in splits {
        for v in split.views() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                v.object.object_id(cfg),
                v.object.shape_id,
                v.object.color_id,
                v.object.material_id,
                v.object.size_id,
                v.view_seed,
                v.nuisance[0],
                v.nuisance[1],
                v.nuisance[2],
                name
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn cfg(shapes: usize, colors: usize, materials: usize, sizes: usize) -> WorldConfig {
        WorldConfig {
            n_shapes: shapes,
            n_colors: colors,
            n_materials: materials,
            n_sizes: sizes,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn default_world_has_320_objects() {
        let objects = enumerate_objects(&WorldConfig::default());
        assert_eq!(objects.len(), 320);
        let unique: HashSet<_> = objects.iter().collect();
        assert_eq!(unique.len(), 320);
    }

    #[test]
    fn singleton_world_has_one_object() {
        assert_eq!(enumerate_objects(&cfg(1, 1, 1, 1)).len(), 1);
    }

    #[test]
    fn reduced_color_world_has_160_objects() {
        assert_eq!(enumerate_objects(&cfg(10, 4, 2, 2)).len(), 160);
    }

    #[test]
    fn object_id_roundtrips() {
        let cfg = WorldConfig::default();
        for (i, obj) in enumerate_objects(&cfg).iter().enumerate() {
            assert_eq!(obj.object_id(&cfg), i);
            assert_eq!(ObjectSpec::from_id(&cfg, i), *obj);
        }
    }

    #[test]
    fn sample_view_is_deterministic() {
        let cfg = WorldConfig::default();
        let obj = ObjectSpec::from_id(&cfg, 123);
        assert_eq!(sample_view(&cfg, obj, 7), sample_view(&cfg, obj, 7));
        let a = sample_view(&cfg, obj, 1);
        let b = sample_view(&cfg, obj, 2);
        assert_eq!(a.object, b.object);
        assert_ne!(a.nuisance, b.nuisance);
    }

    #[test]
    fn nuisance_stays_in_bounds_and_centers() {
        let cfg = WorldConfig::default();
        let obj = ObjectSpec::from_id(&cfg, 0);
        let mut sum_x = 0.0f64;
        for vs in 0..10_000u64 {
            let v = sample_view(&cfg, obj, vs);
            assert!(v.nuisance[0] >= -1.0 && v.nuisance[0] <= 1.0);
            assert!(v.nuisance[1] >= -1.0 && v.nuisance[1] <= 1.0);
            assert!(v.nuisance[2] >= 0.0 && v.nuisance[2] < std::f32::consts::TAU);
            sum_x += v.nuisance[0] as f64;
        }
        let mean = sum_x / 10_000.0;
        assert!(mean.abs() < 0.05, "mean pos_x {}", mean);
    }

    #[test]
    fn paper_scale_split_counts() {
        let cfg = WorldConfig { train_views: 22_000, test_views: 11_000, ..WorldConfig::default() };
        let (train, test) = make_splits(&cfg, 3).unwrap();
        assert_eq!(train.len(), 22_000);
        assert_eq!(test.len(), 11_000);
    }

    #[test]
    fn desk_scale_every_object_in_both_splits() {
        let cfg = WorldConfig::default();
        let (train, test) = make_splits(&cfg, 3).unwrap();
        assert_eq!(train.len(), 6_400);
        assert_eq!(test.len(), 3_200);
        for oid in 0..cfg.object_count() {
            assert!(!train.views_of(oid).is_empty(), "object {} missing from train", oid);
            assert!(
                test.views_of(oid).len() >= 10,
                "object {} appears {} times in test",
                oid,
                test.views_of(oid).len()
            );
        }
    }

    #[test]
    fn splits_share_no_view_seed() {
        let cfg = WorldConfig::default();
        let (train, test) = make_splits(&cfg, 3).unwrap();
        let train_keys: HashSet<(usize, u64)> = train
            .views()
            .iter()
            .map(|v| (v.object.object_id(&cfg), v.view_seed))
            .collect();
        for v in test.views() {
            assert!(!train_keys.contains(&(v.object.object_id(&cfg), v.view_seed)));
        }
    }

    #[test]
    fn split_regeneration_is_identical() {
        let cfg = WorldConfig::default();
        let (tr1, te1) = make_splits(&cfg, 11).unwrap();
        let (tr2, te2) = make_splits(&cfg, 11).unwrap();
        assert_eq!(tr1.views(), tr2.views());
        assert_eq!(te1.views(), te2.views());
        let (tr3, _) = make_splits(&cfg, 12).unwrap();
        assert_ne!(tr1.views(), tr3.views());
    }

    #[test]
    fn undersized_split_is_rejected() {
        let cfg = WorldConfig { train_views: 100, ..WorldConfig::default() };
        match make_splits(&cfg, 0) {
            Err(WorldError::SplitTooSmall { split: "train", .. }) => {}
            other => panic!("expected SplitTooSmall, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn object_frequencies_are_uniform() {
        // Chi-square goodness of fit at p = 0.01 with >= 20 views/object.
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let cfg = WorldConfig::default();
        let (train, _) = make_splits(&cfg, 5).unwrap();
        let n_obj = cfg.object_count();
        let expected = train.len() as f64 / n_obj as f64;
        assert!(expected >= 20.0);
        let chi2: f64 = (0..n_obj)
            .map(|oid| {
                let o = train.views_of(oid).len() as f64;
                (o - expected).powi(2) / expected
            })
            .sum();
        let dist = ChiSquared::new((n_obj - 1) as f64).unwrap();
        let critical = dist.inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 {} >= critical {}", chi2, critical);
    }

    #[test]
    fn csv_export_has_documented_columns() {
        let small = WorldConfig { train_views: 8, test_views: 4, ..cfg(2, 2, 1, 1) };
        let (train, test) = make_splits(&small, 1).unwrap();
        let mut buf = Vec::new();
        write_split_csv(&mut buf, &small, &[(&train, "train"), (&test, "test")]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "object_id,shape_id,color_id,material_id,size_id,view_seed,pos_x,pos_y,light_angle,split"
        );
        assert_eq!(lines.count(), 12);
    }
}
