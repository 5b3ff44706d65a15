use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::NnError;

/// Round to the nearest `f32`. Parameters and optimizer moments are kept
/// `f32`-representable so checkpoints stored as `f32` are lossless.
#[inline]
pub fn snap(v: f64) -> f64 {
    v as f32 as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    Normal { std: f64 },
    /// He-uniform with the given fan-in.
    KaimingUniform { fan_in: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub frozen: bool,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Owns every trainable array of a model, addressed by [`ParamId`] and
/// uniquely by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: &Init,
        rng: &mut R,
    ) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let n: usize = shape.iter().product();
        let value = match *init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![snap(c); n],
            Init::Normal { std } => {
                let d = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| snap(d.sample(rng))).collect()
            }
            Init::KaimingUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                let d = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                (0..n).map(|_| snap(d.sample(rng))).collect()
            }
        };
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            value,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    /// Freeze (or unfreeze) every parameter whose name starts with `prefix`.
    /// Returns how many were touched.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
            n += 1;
        }
        n
    }

    /// Overwrite values from `(name, shape, values)` triples. Every stored
    /// parameter must be supplied exactly once with a matching shape.
    pub fn load_named<'a, I>(&mut self, entries: I) -> Result<(), NnError>
    where
        I: IntoIterator<Item = (&'a str, &'a [usize], &'a [f64])>,
    {
        let mut seen = vec![false; self.params.len()];
        for (name, shape, values) in entries {
            let id = self
                .find(name)
                .ok_or_else(|| NnError::Incompatible(format!("unknown parameter {name}")))?;
            let p = &mut self.params[id.0];
            if p.shape != shape || values.len() != p.numel() {
                return Err(NnError::Incompatible(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    p.shape, shape
                )));
            }
            p.value.copy_from_slice(values);
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(NnError::Incompatible(format!(
                "missing parameter {}",
                self.params[i].name
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_values_are_f32_representable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let id = s.add("w", &[4, 4], &Init::Normal { std: 0.3 }, &mut rng);
        assert!(s.get(id).value.iter().all(|&v| snap(v) == v));
    }

    #[test]
    fn load_named_rejects_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        s.add("w", &[2, 3], &Init::Zeros, &mut rng);
        let vals = vec![0.0; 6];
        let err = s.load_named([("w", &[3, 2][..], &vals[..])]).unwrap_err();
        assert!(matches!(err, NnError::Incompatible(_)));
    }

    #[test]
    fn freeze_by_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        s.add("ego.head.w", &[1], &Init::Zeros, &mut rng);
        s.add("ego.conv0.w", &[1], &Init::Zeros, &mut rng);
        assert_eq!(s.set_frozen("ego.head", true), 1);
        assert!(s.get(ParamId(0)).frozen);
        assert!(!s.get(ParamId(1)).frozen);
    }
}
