//! Datasets and their non-IID distribution across nodes.
//!
//! Shards all have the same size; the Dirichlet concentration only shapes the
//! class mix inside each shard.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::{Error, NodeId, Result};

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        feature_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be positive"));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::invalid(
                "dataset",
                format!(
                    "{} feature values do not fill {} rows of width {}",
                    features.len(),
                    labels.len(),
                    feature_dim
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(
                "dataset",
                format!("label {bad} out of range for {num_classes} classes"),
            ));
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Sample count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Splits off the last `n` samples as a second dataset.
    pub fn split_tail(mut self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let keep = self.len() - n;
        let tail_features = self.features.split_off(keep * self.feature_dim);
        let tail_labels = self.labels.split_off(keep);
        let tail = Dataset {
            features: tail_features,
            labels: tail_labels,
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
        };
        (self, tail)
    }
}

/// The samples owned by one node, as indices into the training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub owner: NodeId,
    pub indices: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn class_counts(&self, data: &Dataset) -> Vec<usize> {
        let mut counts = alloc::vec![0; data.num_classes()];
        for &i in &self.indices {
            counts[data.label(i)] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletSpec {
    pub alpha: f64,
    pub num_nodes: usize,
    pub num_classes: usize,
}

impl DirichletSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be positive and finite"));
        }
        if self.num_nodes == 0 || self.num_classes == 0 {
            return Err(Error::invalid("dirichlet spec", "need at least one node and one class"));
        }
        Ok(())
    }
}

/// Shards plus how often the per-node draw had to be repaired.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub shards: Vec<Shard>,
    /// Rejected Dirichlet draws over all nodes.
    pub retries: usize,
    /// Nodes whose counts were rescaled to what the class pools had left.
    pub fallbacks: usize,
}

/// Proportion draws per node before falling back to rescaling.
pub const MAX_DRAW_RETRIES: usize = 10;

/// One draw from Dir(alpha, ..., alpha) over `k` categories.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut p: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = p.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        p.iter_mut().for_each(|x| *x /= sum);
    } else {
        // Every gamma variate underflowed (tiny alpha): all mass on one class.
        p.iter_mut().for_each(|x| *x = 0.0);
        p[rng.random_range(0..k)] = 1.0;
    }
    p
}

/// Integer counts summing to `total` whose shares follow `weights`
/// (largest-remainder rounding; ties go to the lower index).
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if !(sum > 0.0) {
        let mut out = alloc::vec![0; weights.len()];
        out[0] = total;
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| libm::floor(*x) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Gives every node `floor(D / N)` samples with a class mix drawn from
/// Dir(alpha).
///
/// Nodes are served in id order from shuffled per-class pools. When a draw asks
/// for more of a class than is left, it is redrawn up to [`MAX_DRAW_RETRIES`]
/// times; after that the last draw is capped at what each pool holds and the
/// shortfall is spread over the remaining pools in proportion to their size.
pub fn partition_dirichlet<R: Rng + ?Sized>(
    data: &Dataset,
    spec: &DirichletSpec,
    rng: &mut R,
) -> Result<Partition> {
    spec.validate()?;
    if spec.num_classes != data.num_classes() {
        return Err(Error::invalid(
            "dirichlet spec",
            format!(
                "{} classes requested, dataset has {}",
                spec.num_classes,
                data.num_classes()
            ),
        ));
    }
    let required = spec.num_nodes * spec.num_classes;
    if data.len() < required {
        return Err(Error::InsufficientSamples {
            available: data.len(),
            required,
        });
    }
    let shard_size = data.len() / spec.num_nodes;

    let mut pools: Vec<Vec<usize>> = alloc::vec![Vec::new(); spec.num_classes];
    for (i, &l) in data.labels().iter().enumerate() {
        pools[l].push(i);
    }
    for pool in pools.iter_mut() {
        pool.shuffle(rng);
    }

    let mut shards = Vec::with_capacity(spec.num_nodes);
    let mut retries = 0;
    let mut fallbacks = 0;
    for owner in 0..spec.num_nodes {
        let mut counts = Vec::new();
        let mut feasible = false;
        for attempt in 0..MAX_DRAW_RETRIES {
            let p = sample_dirichlet(spec.alpha, spec.num_classes, rng);
            counts = apportion(shard_size, &p);
            if counts.iter().zip(&pools).all(|(&c, pool)| c <= pool.len()) {
                feasible = true;
                retries += attempt;
                break;
            }
        }
        if !feasible {
            retries += MAX_DRAW_RETRIES;
            fallbacks += 1;
            log::debug!("node {owner}: class pools exhausted, rescaling draw");
            for (c, pool) in counts.iter_mut().zip(&pools) {
                *c = (*c).min(pool.len());
            }
            let deficit = shard_size - counts.iter().sum::<usize>();
            let spare: Vec<f64> = counts
                .iter()
                .zip(&pools)
                .map(|(&c, pool)| (pool.len() - c) as f64)
                .collect();
            for (c, extra) in counts.iter_mut().zip(apportion(deficit, &spare)) {
                *c += extra;
            }
        }
        let mut indices = Vec::with_capacity(shard_size);
        for (pool, &c) in pools.iter_mut().zip(&counts) {
            let at = pool.len() - c;
            indices.extend(pool.drain(at..));
        }
        indices.sort_unstable();
        shards.push(Shard { owner, indices });
    }
    if fallbacks > 0 {
        log::info!("dirichlet partition: {fallbacks} of {} nodes rescaled", spec.num_nodes);
    }
    Ok(Partition {
        shards,
        retries,
        fallbacks,
    })
}

/// Gaussian class clusters with unit within-class variance.
///
/// With `num_classes <= feature_dim` the centers sit on scaled coordinate axes
/// so every pair of centers is exactly `separation` apart. With more classes
/// than dimensions the centers are random directions of the same norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    centers: Vec<Vec<f64>>,
    feature_dim: usize,
}

impl SyntheticTask {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        num_classes: usize,
        separation: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("num_classes", "need at least 2 classes"));
        }
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be positive"));
        }
        if !(separation >= 0.0 && separation.is_finite()) {
            return Err(Error::invalid("separation", "must be finite and >= 0"));
        }
        let radius = separation / core::f64::consts::SQRT_2;
        let centers = if num_classes <= feature_dim {
            (0..num_classes)
                .map(|c| {
                    let mut v = alloc::vec![0.0; feature_dim];
                    v[c] = radius;
                    v
                })
                .collect()
        } else {
            (0..num_classes)
                .map(|_| {
                    let v: Vec<f64> = (0..feature_dim).map(|_| rng.sample(StandardNormal)).collect();
                    let n = crate::math::norm(&v).max(f64::MIN_POSITIVE);
                    v.into_iter().map(|x| x * radius / n).collect()
                })
                .collect()
        };
        Ok(Self {
            centers,
            feature_dim,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.centers.len()
    }

    pub fn center(&self, class: usize) -> &[f64] {
        &self.centers[class]
    }

    /// `num_samples` points with globally balanced labels, in shuffled order.
    pub fn sample<R: Rng + ?Sized>(&self, num_samples: usize, rng: &mut R) -> Dataset {
        let c = self.num_classes();
        let mut labels: Vec<usize> = (0..num_samples).map(|i| i % c).collect();
        labels.shuffle(rng);
        let mut features = Vec::with_capacity(num_samples * self.feature_dim);
        for &l in &labels {
            for &mu in &self.centers[l] {
                let z: f64 = rng.sample(StandardNormal);
                features.push(mu + z);
            }
        }
        Dataset {
            features,
            labels,
            feature_dim: self.feature_dim,
            num_classes: c,
        }
    }
}

pub fn make_synthetic<R: Rng + ?Sized>(
    num_samples: usize,
    feature_dim: usize,
    num_classes: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Dataset> {
    Ok(SyntheticTask::new(feature_dim, num_classes, separation, rng)?.sample(num_samples, rng))
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn format_error(what: &str, reason: impl Into<String>) -> Error {
    Error::Format {
        what: what.to_string(),
        reason: reason.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_error(what, "truncated header"))
}

/// Parsed IDX image file: `count` images of `rows x cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

/// Decodes up to `max` images. `what` names the source in errors.
pub fn decode_idx_images(bytes: &[u8], max: usize, what: &str) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0, what)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_error(
            what,
            format!("bad magic number {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = read_u32(bytes, 4, what)? as usize;
    let rows = read_u32(bytes, 8, what)? as usize;
    let cols = read_u32(bytes, 12, what)? as usize;
    let size = rows * cols;
    let payload = &bytes[16..];
    if payload.len() < count * size {
        return Err(format_error(
            what,
            format!(
                "truncated: header declares {count} images of {size} bytes, payload has {} bytes",
                payload.len()
            ),
        ));
    }
    let take = count.min(max);
    Ok(IdxImages {
        rows,
        cols,
        pixels: payload[..take * size].to_vec(),
    })
}

/// Decodes up to `max` labels.
pub fn decode_idx_labels(bytes: &[u8], max: usize, what: &str) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, what)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_error(
            what,
            format!("bad magic number {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let count = read_u32(bytes, 4, what)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(format_error(
            what,
            format!("truncated: header declares {count} labels, payload has {}", payload.len()),
        ));
    }
    Ok(payload[..count.min(max)].to_vec())
}

/// Declared item count of an IDX file (images or labels).
pub fn idx_declared_count(bytes: &[u8], what: &str) -> Result<usize> {
    Ok(read_u32(bytes, 4, what)? as usize)
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count() as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Builds a dataset from IDX image and label files, pixels scaled to [0, 1].
///
/// Both files must declare the same item count. The class count is the
/// largest label plus one.
pub fn dataset_from_idx(
    image_bytes: &[u8],
    label_bytes: &[u8],
    max_samples: usize,
    images_name: &str,
    labels_name: &str,
) -> Result<Dataset> {
    let images = decode_idx_images(image_bytes, max_samples, images_name)?;
    let labels = decode_idx_labels(label_bytes, max_samples, labels_name)?;
    let n_images = idx_declared_count(image_bytes, images_name)?;
    let n_labels = idx_declared_count(label_bytes, labels_name)?;
    if n_images != n_labels {
        return Err(format_error(
            labels_name,
            format!("{n_labels} labels do not match {n_images} images in {images_name}"),
        ));
    }
    let dim = images.rows * images.cols;
    let features = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(features, labels, dim.max(1), num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn balanced(n: usize, c: usize) -> Dataset {
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        Dataset::new(alloc::vec![0.0; n], labels, 1, c).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(alloc::vec![0.0; 5], alloc::vec![0, 1], 2, 2).is_err());
        assert!(Dataset::new(alloc::vec![0.0; 4], alloc::vec![0, 2], 2, 2).is_err());
        assert!(Dataset::new(alloc::vec![0.0; 4], alloc::vec![0, 1], 2, 2).is_ok());
    }

    #[test]
    fn apportion_sums_exactly() {
        assert_eq!(apportion(10, &[0.25, 0.25, 0.5]), [3, 2, 5]);
        assert_eq!(apportion(7, &[1.0, 1.0, 1.0]), [3, 2, 2]);
        assert_eq!(apportion(5, &[0.0, 0.0]), [5, 0]);
        assert_eq!(apportion(0, &[0.3, 0.7]), [0, 0]);
    }

    #[test]
    fn synthetic_labels_are_balanced() {
        let mut rng = stream(1, Stream::Synthetic, 0);
        let d = make_synthetic(1000, 32, 10, 3.0, &mut rng).unwrap();
        assert_eq!(d.class_counts(), [100; 10]);
        assert_eq!(d.feature_dim(), 32);
    }

    #[test]
    fn synthetic_center_spacing() {
        let mut rng = stream(1, Stream::Synthetic, 0);
        let t = SyntheticTask::new(32, 10, 4.0, &mut rng).unwrap();
        for a in 0..10 {
            for b in (a + 1)..10 {
                let d = crate::math::distance(t.center(a), t.center(b));
                assert!((d - 4.0).abs() < 1e-12);
            }
        }
        assert!(SyntheticTask::new(32, 1, 1.0, &mut rng).is_err());
    }

    #[test]
    fn single_node_takes_everything() {
        let data = balanced(103, 10);
        let mut rng = stream(2, Stream::Partition, 0);
        let spec = DirichletSpec {
            alpha: 1.0,
            num_nodes: 1,
            num_classes: 10,
        };
        let p = partition_dirichlet(&data, &spec, &mut rng).unwrap();
        assert_eq!(p.shards.len(), 1);
        assert_eq!(p.shards[0].len(), 103);
        assert_eq!(p.shards[0].class_counts(&data), data.class_counts());
    }

    #[test]
    fn partition_rejects_too_few_samples() {
        let data = balanced(50, 10);
        let spec = DirichletSpec {
            alpha: 1.0,
            num_nodes: 6,
            num_classes: 10,
        };
        let mut rng = stream(2, Stream::Partition, 0);
        assert_eq!(
            partition_dirichlet(&data, &spec, &mut rng),
            Err(Error::InsufficientSamples {
                available: 50,
                required: 60
            })
        );
    }

    #[test]
    fn partition_disjoint_equal_sizes_sweep() {
        let data = balanced(4013, 10);
        for case in 0..200u64 {
            let alpha = [0.05, 0.1, 0.5, 1.0, 10.0, 100.0, 1000.0][case as usize % 7];
            let num_nodes = 1 + (case as usize % 23);
            let spec = DirichletSpec {
                alpha,
                num_nodes,
                num_classes: 10,
            };
            let mut rng = stream(case, Stream::Partition, 0);
            let p = partition_dirichlet(&data, &spec, &mut rng).unwrap();
            let mut seen = alloc::vec![false; data.len()];
            for s in &p.shards {
                assert_eq!(s.len(), data.len() / num_nodes, "alpha {alpha} nodes {num_nodes}");
                for &i in &s.indices {
                    assert!(!seen[i], "sample {i} assigned twice");
                    seen[i] = true;
                }
            }
        }
    }

    #[test]
    fn high_alpha_is_near_uniform() {
        let data = balanced(4000, 10);
        let spec = DirichletSpec {
            alpha: 100.0,
            num_nodes: 20,
            num_classes: 10,
        };
        let mut within = 0;
        let mut total = 0;
        for seed in 0..50 {
            let mut rng = stream(seed, Stream::Partition, 0);
            let p = partition_dirichlet(&data, &spec, &mut rng).unwrap();
            for s in &p.shards {
                for c in s.class_counts(&data) {
                    let share = c as f64 / s.len() as f64;
                    total += 1;
                    if (share - 0.1).abs() <= 0.03 {
                        within += 1;
                    }
                }
            }
        }
        let frac = within as f64 / total as f64;
        assert!(frac >= 0.95, "{frac}");
    }

    #[test]
    fn idx_round_trip() {
        let images = IdxImages {
            rows: 3,
            cols: 2,
            pixels: (0u8..24).map(|x| x.wrapping_mul(37)).collect(),
        };
        let labels = [3u8, 0, 9, 1];
        let ib = encode_idx_images(&images);
        let lb = encode_idx_labels(&labels);
        assert_eq!(decode_idx_images(&ib, usize::MAX, "img").unwrap(), images);
        assert_eq!(decode_idx_labels(&lb, usize::MAX, "lbl").unwrap(), labels);
        let d = dataset_from_idx(&ib, &lb, 10, "img", "lbl").unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.feature_dim(), 6);
        assert_eq!(d.num_classes(), 10);
        for i in 0..4 {
            for (j, &f) in d.features(i).iter().enumerate() {
                assert_eq!(f, f64::from(images.pixels[i * 6 + j]) / 255.0);
            }
        }
        let d2 = dataset_from_idx(&ib, &lb, 2, "img", "lbl").unwrap();
        assert_eq!(d2.len(), 2);
        assert!(dataset_from_idx(&ib, &lb, 0, "img", "lbl").unwrap().is_empty());
    }

    #[test]
    fn idx_format_errors_name_the_file() {
        let images = IdxImages {
            rows: 2,
            cols: 2,
            pixels: alloc::vec![1; 8],
        };
        let ib = encode_idx_images(&images);
        let lb = encode_idx_labels(&[1, 2]);
        // labels file carrying the image magic
        let err = dataset_from_idx(&ib, &ib, 5, "img", "lbl").unwrap_err();
        assert!(matches!(err, Error::Format { ref what, .. } if what == "lbl"), "{err:?}");
        let err = decode_idx_images(&ib[..20], 5, "img").unwrap_err();
        assert!(matches!(err, Error::Format { ref what, .. } if what == "img"));
        let err = dataset_from_idx(&ib, &encode_idx_labels(&[1, 2, 3]), 5, "img", "lbl").unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(dataset_from_idx(&ib, &lb, 5, "img", "lbl").is_ok());
    }
}
