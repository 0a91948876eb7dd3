use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiffError, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Named parameter arrays keyed by slash-separated paths such as
/// `actor/layer0/weight`. Iteration is lexicographic, which keeps checkpoint
/// bytes stable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamTree {
    entries: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    params: BTreeMap<String, StoredTensor>,
}

impl ParamTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.entries.insert(path.into(), value)
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.entries.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Entries whose path starts with `prefix/`.
    pub fn subtree<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a Tensor)> + 'a {
        self.entries
            .iter()
            .filter(move |(k, _)| k.strip_prefix(prefix).is_some_and(|rest| rest.starts_with('/')))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }

    pub fn to_json(&self) -> Result<String, DiffError> {
        if let Some((path, _)) = self.entries.iter().find(|(_, t)| !t.is_finite()) {
            return Err(DiffError::NonFinite(format!("parameter {path}")));
        }
        let doc = Checkpoint {
            version: CHECKPOINT_VERSION,
            params: self
                .entries
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        StoredTensor {
                            shape: t.shape().to_vec(),
                            data: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self, DiffError> {
        let doc: Checkpoint = serde_json::from_str(text)?;
        if doc.version != CHECKPOINT_VERSION {
            return Err(DiffError::Config(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                doc.version
            )));
        }
        let mut entries = BTreeMap::new();
        for (path, stored) in doc.params {
            let t = Tensor::new(stored.shape, stored.data)
                .map_err(|e| DiffError::Config(format!("parameter {path}: {e}")))?;
            entries.insert(path, t);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), DiffError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DiffError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn json_layout_is_versioned_and_sorted() {
        let mut tree = ParamTree::new();
        tree.insert("b/w", Tensor::vector(vec![0.1]));
        tree.insert("a/w", Tensor::matrix(1, 2, vec![1.0, -2.5]).unwrap());
        let json = tree.to_json().unwrap();
        assert_eq!(
            json,
            r#"{"version":1,"params":{"a/w":{"shape":[1,2],"data":[1.0,-2.5]},"b/w":{"shape":[1],"data":[0.1]}}}"#
        );
    }

    #[test]
    fn non_finite_parameters_cannot_be_saved() {
        let mut tree = ParamTree::new();
        tree.insert("x", Tensor::vector(vec![f64::NAN]));
        assert!(matches!(tree.to_json(), Err(DiffError::NonFinite(_))));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let err = ParamTree::from_json(r#"{"version":2,"params":{}}"#).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn subtree_matches_whole_path_segments() {
        let mut tree = ParamTree::new();
        tree.insert("critic/q1", Tensor::scalar(1.0));
        tree.insert("critic_target/q1", Tensor::scalar(2.0));
        let names: Vec<_> = tree.subtree("critic").map(|(k, _)| k.as_str()).collect();
        assert_eq!(names, vec!["critic/q1"]);
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_exact(values in proptest::collection::vec(-1e6f64..1e6, 1..20)) {
            let mut tree = ParamTree::new();
            tree.insert("p/x", Tensor::vector(values.clone()));
            tree.insert("p/s", Tensor::scalar(values[0] * 1e-9));
            let back = ParamTree::from_json(&tree.to_json().unwrap()).unwrap();
            prop_assert_eq!(back, tree);
        }
    }
}
