use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gei::{downsample_gei, GaitEnergyImage, FEATURE_DIM};
use crate::error::{Error, Result};

pub const FOREST_MAGIC: &[u8; 8] = b"GAITFRST";
pub const FOREST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub trees: usize,
    /// Features drawn per split; `None` means `sqrt(d)`.
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { trees: 100, max_features: None, min_samples_leaf: 1, max_depth: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    /// Training-sample count per class.
    Leaf { counts: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Class voted by this tree (largest leaf count, lowest class index on ties).
    pub fn vote(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature as usize] <= *threshold { *left } else { *right } as usize;
                }
                Node::Leaf { counts } => {
                    let mut best = 0;
                    for (c, &n) in counts.iter().enumerate() {
                        if n > counts[best] {
                            best = c;
                        }
                    }
                    return best;
                }
            }
        }
    }
}

/// Anything that ranks subject ids for a GEI.
pub trait Recognizer {
    /// `(subject_id, score)` in descending score order, covering every class.
    fn rank(&self, gei: &GaitEnergyImage) -> Result<Vec<(String, f64)>>;
}

/// Bagged decision forest over downsampled GEIs.
#[derive(Clone, Debug, PartialEq)]
pub struct ForestModel {
    pub classes: Vec<String>,
    pub feature_dim: usize,
    pub trees: Vec<Tree>,
    /// Bootstrap sample indices used by each tree.
    pub bootstrap: Vec<Vec<u32>>,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    config: &'a ForestConfig,
}

fn gini(counts: &[u32], total: u32) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

impl Builder<'_> {
    fn counts(&self, samples: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_classes];
        for &s in samples {
            counts[self.y[s]] += 1;
        }
        counts
    }

    /// Best (feature, threshold, weighted child impurity) among `mtry`
    /// non-constant features drawn at random.
    fn best_split(&self, samples: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let total = samples.len() as u32;
        let parent = self.counts(samples);
        let min_leaf = self.config.min_samples_leaf.max(1);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut tried = 0;
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
        for f in features {
            if tried >= self.mtry {
                break;
            }
            order.clear();
            order.extend(samples.iter().map(|&s| (self.x[s][f], self.y[s])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            if order[0].0 == order[order.len() - 1].0 {
                continue;
            }
            tried += 1;
            let mut left = vec![0u32; self.n_classes];
            for k in 0..order.len() - 1 {
                left[order[k].1] += 1;
                if order[k].0 == order[k + 1].0 {
                    continue;
                }
                let nl = (k + 1) as u32;
                let nr = total - nl;
                if (nl as usize) < min_leaf || (nr as usize) < min_leaf {
                    continue;
                }
                let right: Vec<u32> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
                let score = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / total as f64;
                if best.map_or(true, |(_, _, s)| score < s - 1e-15) {
                    best = Some((f, 0.5 * (order[k].0 + order[k + 1].0), score));
                }
            }
        }
        let (f, t, score) = best?;
        (score < gini(&parent, total) - 1e-15).then_some((f, t))
    }

    fn grow(&self, samples: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
        let mut nodes = vec![Node::Leaf { counts: vec![] }];
        let mut stack = vec![(0usize, samples, 0usize)];
        while let Some((slot, samples, depth)) = stack.pop() {
            let counts = self.counts(&samples);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let deep = self.config.max_depth.is_some_and(|m| depth >= m);
            let split = if pure || deep || samples.len() < 2 * self.config.min_samples_leaf.max(1) {
                None
            } else {
                self.best_split(&samples, rng)
            };
            match split {
                None => nodes[slot] = Node::Leaf { counts },
                Some((feature, threshold)) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        samples.iter().partition(|&&s| self.x[s][feature] <= threshold);
                    let (li, ri) = (nodes.len(), nodes.len() + 1);
                    nodes.push(Node::Leaf { counts: vec![] });
                    nodes.push(Node::Leaf { counts: vec![] });
                    nodes[slot] = Node::Split { feature: feature as u32, threshold, left: li as u32, right: ri as u32 };
                    stack.push((ri, r, depth + 1));
                    stack.push((li, l, depth + 1));
                }
            }
        }
        Tree { nodes }
    }
}

/// Trains on `(gei, subject_id)` pairs. Classes are ordered by id; each tree
/// draws its bootstrap sample and split features from its own stream
/// derived from the master seed.
pub fn train_forest(geis: &[(GaitEnergyImage, String)], config: &ForestConfig) -> Result<ForestModel> {
    let features: Vec<Vec<f64>> = geis.iter().map(|(g, _)| downsample_gei(g)).collect();
    let labels: Vec<String> = geis.iter().map(|(_, s)| s.clone()).collect();
    train_forest_features(&features, &labels, config)
}

pub fn train_forest_features(x: &[Vec<f64>], labels: &[String], config: &ForestConfig) -> Result<ForestModel> {
    if x.is_empty() {
        return Err(Error::Empty("forest training set".into()));
    }
    if x.len() != labels.len() {
        return Err(Error::shape(x.len(), labels.len()));
    }
    if config.trees == 0 {
        return Err(Error::InvalidParameter("forest needs at least one tree".into()));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidParameter("feature vectors must share a nonzero length".into()));
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let y: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).expect("known class")).collect();
    let mtry = config.max_features.unwrap_or_else(|| (d as f64).sqrt().round() as usize).clamp(1, d);
    let builder = Builder { x, y: &y, n_classes: classes.len(), mtry, config };
    let grow = |t: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(t as u64 + 1);
        let sample: Vec<usize> = (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect();
        let tree = builder.grow(sample.clone(), &mut rng);
        (tree, sample.into_iter().map(|s| s as u32).collect::<Vec<u32>>())
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(config.trees);
    let grown: Vec<(Tree, Vec<u32>)> = if workers <= 1 {
        (0..config.trees).map(grow).collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let grow = &grow;
                    scope.spawn(move || (w..config.trees).step_by(workers).map(|t| (t, grow(t))).collect::<Vec<_>>())
                })
                .collect();
            let mut all: Vec<(usize, (Tree, Vec<u32>))> =
                handles.into_iter().flat_map(|h| h.join().expect("tree worker panicked")).collect();
            all.sort_by_key(|(t, _)| *t);
            all.into_iter().map(|(_, g)| g).collect()
        })
    };
    let (trees, bootstrap) = grown.into_iter().unzip();
    Ok(ForestModel { classes, feature_dim: d, trees, bootstrap })
}

impl ForestModel {
    /// Vote fractions per class, in class order.
    pub fn vote_fractions(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_dim {
            return Err(Error::shape(self.feature_dim, features.len()));
        }
        let mut votes = vec![0usize; self.classes.len()];
        for tree in &self.trees {
            votes[tree.vote(features)] += 1;
        }
        Ok(votes.iter().map(|&v| v as f64 / self.trees.len() as f64).collect())
    }

    pub fn rank_features(&self, features: &[f64]) -> Result<Vec<(String, f64)>> {
        let scores = self.vote_fractions(features)?;
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
        // stable sort keeps class order among ties
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(ranked.into_iter().map(|(c, s)| (self.classes[c].clone(), s)).collect())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(FOREST_MAGIC)?;
        w.write_all(&FOREST_VERSION.to_le_bytes())?;
        let header = serde_json::to_vec(&serde_json::json!({
            "classes": self.classes,
            "feature_dim": self.feature_dim,
        }))?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.trees.len() as u32).to_le_bytes())?;
        for (tree, sample) in self.trees.iter().zip(&self.bootstrap) {
            w.write_all(&(sample.len() as u32).to_le_bytes())?;
            for s in sample {
                w.write_all(&s.to_le_bytes())?;
            }
            w.write_all(&(tree.nodes.len() as u32).to_le_bytes())?;
            for node in &tree.nodes {
                match node {
                    Node::Split { feature, threshold, left, right } => {
                        w.write_all(&[0])?;
                        w.write_all(&feature.to_le_bytes())?;
                        w.write_all(&threshold.to_le_bytes())?;
                        w.write_all(&left.to_le_bytes())?;
                        w.write_all(&right.to_le_bytes())?;
                    }
                    Node::Leaf { counts } => {
                        w.write_all(&[1])?;
                        for c in counts {
                            w.write_all(&c.to_le_bytes())?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        fn bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b).map_err(|e| Error::InvalidCheckpoint(format!("truncated forest: {e}")))?;
            Ok(b)
        }
        let u32_ = |r: &mut dyn Read| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| Error::InvalidCheckpoint(format!("truncated forest: {e}")))?;
            Ok(u32::from_le_bytes(b))
        };
        if &bytes::<8>(r)? != FOREST_MAGIC {
            return Err(Error::InvalidCheckpoint("not a forest file".into()));
        }
        let version = u32::from_le_bytes(bytes::<4>(r)?);
        if version != FOREST_VERSION {
            return Err(Error::InvalidCheckpoint(format!("unsupported forest version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes::<8>(r)?) as usize;
        if header_len > 1 << 26 {
            return Err(Error::InvalidCheckpoint("oversized forest header".into()));
        }
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header).map_err(|e| Error::InvalidCheckpoint(format!("truncated forest: {e}")))?;
        #[derive(Deserialize)]
        struct Header {
            classes: Vec<String>,
            feature_dim: usize,
        }
        let Header { classes, feature_dim } = serde_json::from_slice(&header)?;
        let n_trees = u32_(r)? as usize;
        let (mut trees, mut bootstrap) = (Vec::new(), Vec::new());
        for _ in 0..n_trees {
            let n = u32_(r)? as usize;
            bootstrap.push((0..n).map(|_| u32_(r)).collect::<Result<Vec<_>>>()?);
            let n_nodes = u32_(r)? as usize;
            let mut nodes = Vec::new();
            for _ in 0..n_nodes {
                nodes.push(match bytes::<1>(r)?[0] {
                    0 => Node::Split {
                        feature: u32_(r)?,
                        threshold: f64::from_le_bytes(bytes::<8>(r)?),
                        left: u32_(r)?,
                        right: u32_(r)?,
                    },
                    1 => Node::Leaf { counts: (0..classes.len()).map(|_| u32_(r)).collect::<Result<_>>()? },
                    tag => return Err(Error::InvalidCheckpoint(format!("bad node tag {tag}"))),
                });
            }
            let valid = nodes.iter().all(|n| match n {
                Node::Split { feature, left, right, .. } => {
                    (*feature as usize) < feature_dim && (*left as usize) < n_nodes && (*right as usize) < n_nodes
                }
                Node::Leaf { .. } => true,
            });
            if !valid || nodes.is_empty() {
                return Err(Error::InvalidCheckpoint("corrupt tree structure".into()));
            }
            trees.push(Tree { nodes });
        }
        Ok(ForestModel { classes, feature_dim, trees, bootstrap })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut slice = bytes.as_slice();
        let model = Self::read_from(&mut slice)?;
        if !slice.is_empty() {
            return Err(Error::InvalidCheckpoint("trailing bytes after forest".into()));
        }
        Ok(model)
    }
}

impl Recognizer for ForestModel {
    fn rank(&self, gei: &GaitEnergyImage) -> Result<Vec<(String, f64)>> {
        debug_assert_eq!(self.feature_dim, FEATURE_DIM);
        self.rank_features(&downsample_gei(gei))
    }
}

/// Ranked subject list for a GEI.
pub fn classify(model: &ForestModel, gei: &GaitEnergyImage) -> Result<Vec<(String, f64)>> {
    model.rank(gei)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<String>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in 0..3 {
            for k in 0..4 {
                x.push(vec![c as f64 + 0.1 * k as f64, (k % 2) as f64, 7.0]);
                y.push(format!("c{c}"));
            }
        }
        (x, y)
    }

    #[test]
    fn separable_data_is_memorized() {
        let (x, y) = toy();
        let cfg = ForestConfig { trees: 25, ..ForestConfig::default() };
        let m = train_forest_features(&x, &y, &cfg).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let ranked = m.rank_features(xi).unwrap();
            assert_eq!(&ranked[0].0, yi);
            assert_eq!(ranked.len(), 3);
            assert!((ranked.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_and_empty_are_rejected() {
        let cfg = ForestConfig::default();
        assert!(matches!(train_forest_features(&[], &[], &cfg), Err(Error::Empty(_))));
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(train_forest_features(&x, &["a".into(), "a".into()], &cfg), Err(Error::SingleClass)));
    }

    #[test]
    fn ties_follow_class_order() {
        // a single-leaf forest: every tree is pure on its bootstrap or not
        let x = vec![vec![1.0], vec![1.0]];
        let y = vec!["b".to_string(), "a".to_string()];
        let m = train_forest_features(&x, &y, &ForestConfig { trees: 2, ..ForestConfig::default() }).unwrap();
        let ranked = m.rank_features(&[1.0]).unwrap();
        if ranked[0].1 == ranked[1].1 {
            assert_eq!(ranked[0].0, "a");
        }
    }

    #[test]
    fn serialization_round_trip() {
        let (x, y) = toy();
        let m = train_forest_features(&x, &y, &ForestConfig { trees: 5, seed: 3, ..ForestConfig::default() }).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(ForestModel::read_from(&mut buf.as_slice()).unwrap(), m);
        buf[0] = b'X';
        assert!(ForestModel::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn wrong_feature_length_is_rejected() {
        let (x, y) = toy();
        let m = train_forest_features(&x, &y, &ForestConfig { trees: 3, ..ForestConfig::default() }).unwrap();
        assert!(m.rank_features(&[0.0]).is_err());
    }
}
