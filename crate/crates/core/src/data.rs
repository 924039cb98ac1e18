//! Datasets, IDX ingestion, the synthetic blob generator and non-iid client
//! partitioning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::models::Batch;
use crate::param_space::RngStream;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-major features scaled to `[0, 1]` with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dataset.dim", "must be >= 1"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                left: features.len(),
                right: labels.len() * dim,
            });
        }
        if let Some(i) = features.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(
                "dataset.features",
                format!("value {} at row {} outside [0, 1]", features[i], i / dim),
            ));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                num_classes,
            });
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Copies the given rows into a [`Batch`].
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(inputs, self.dim, labels).expect("dataset rows are valid batch rows")
    }

    /// Stacks datasets with equal feature dimension.
    pub fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
        let mut iter = parts.into_iter();
        let mut out = iter.next().ok_or(Error::Empty("dataset list"))?;
        for part in iter {
            if part.dim != out.dim {
                return Err(Error::DimensionMismatch {
                    left: out.dim,
                    right: part.dim,
                });
            }
            out.num_classes = out.num_classes.max(part.num_classes);
            out.features.extend(part.features);
            out.labels.extend(part.labels);
        }
        Ok(out)
    }

    fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or_else(|| Error::IdxTruncated {
        path: path.to_path_buf(),
        needed: offset + 4,
        available: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32_be(bytes, 0, path)?;
    if found != expected {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], needed: usize, path: &Path) -> Result<()> {
    if bytes.len() < needed {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            needed,
            available: bytes.len(),
        });
    }
    Ok(())
}

/// Reads an IDX image file (magic 2051) and label file (magic 2049).
///
/// Pixels are scaled by `1/255`; images are flattened row-major. The class
/// count is one more than the largest label seen.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;

    check_magic(&images, IDX_IMAGES_MAGIC, images_path)?;
    let n_images = read_u32_be(&images, 4, images_path)? as usize;
    let rows = read_u32_be(&images, 8, images_path)? as usize;
    let cols = read_u32_be(&images, 12, images_path)? as usize;
    let dim = rows * cols;
    check_len(&images, 16 + n_images * dim, images_path)?;

    check_magic(&labels, IDX_LABELS_MAGIC, labels_path)?;
    let n_labels = read_u32_be(&labels, 4, labels_path)? as usize;
    check_len(&labels, 8 + n_labels, labels_path)?;

    if n_images != n_labels {
        return Err(Error::IdxCountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let features = images[16..16 + n_images * dim]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let labels: Vec<usize> = labels[8..8 + n_labels].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(features, dim, labels, num_classes)
}

/// Gaussian blobs: class `c` has mean `class_separation * u_c` for a random
/// unit direction `u_c`, unit within-class noise. Each raw coordinate is
/// then passed through the logistic function to land in `[0, 1]`. Rows are
/// grouped by class, `examples_per_class` each.
pub fn synth_generate(
    num_classes: usize,
    examples_per_class: usize,
    input_dim: usize,
    class_separation: f64,
    stream: &mut RngStream,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::invalid("synthetic.num_classes", "must be >= 2"));
    }
    if examples_per_class == 0 || input_dim == 0 {
        return Err(Error::invalid(
            "synthetic",
            "examples_per_class and input_dim must be >= 1",
        ));
    }
    if !(class_separation.is_finite() && class_separation >= 0.0) {
        return Err(Error::invalid(
            "synthetic.class_separation",
            format!("must be finite and >= 0, got {class_separation}"),
        ));
    }

    let mut means = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let dir: Vec<f64> = (0..input_dim)
            .map(|_| StandardNormal.sample(&mut *stream))
            .collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        means.push(dir.into_iter().map(|v| class_separation * v / norm).collect::<Vec<_>>());
    }

    let n = num_classes * examples_per_class;
    let mut raw = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..examples_per_class {
            for m in mean {
                let noise: f64 = StandardNormal.sample(&mut *stream);
                raw.push(m + noise);
            }
            labels.push(c);
        }
    }

    // logistic squashing keeps the noise near unit scale around 0.5; a
    // global min-max map would shrink it by the full dynamic range
    let features = raw.into_iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
    Dataset::new(features, input_dim, labels, num_classes)
}

/// Train and test row indices held by one client.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientShard {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.test.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub client_shards: Vec<ClientShard>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.client_shards.len()
    }

    /// All test indices, in client order. This is the global test pool.
    pub fn test_pool(&self) -> Vec<usize> {
        self.client_shards
            .iter()
            .flat_map(|s| s.test.iter().copied())
            .collect()
    }

    /// Checks index validity and that no row is held twice.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let mut seen = vec![false; ds.len()];
        for (client, shard) in self.client_shards.iter().enumerate() {
            for &i in shard.train.iter().chain(&shard.test) {
                if i >= ds.len() {
                    return Err(Error::Partition(format!(
                        "client {client}: index {i} out of range"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Partition(format!(
                        "client {client}: index {i} assigned twice"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Distinct labels present in a client's shard, sorted.
    pub fn client_labels(&self, ds: &Dataset, client: usize) -> Vec<usize> {
        let shard = &self.client_shards[client];
        let mut labels: Vec<usize> = shard
            .train
            .iter()
            .chain(&shard.test)
            .map(|&i| ds.labels()[i])
            .collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }
}

fn check_fraction(train_fraction: f64) -> Result<()> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::invalid(
            "train_fraction",
            format!("must lie in (0, 1], got {train_fraction}"),
        ));
    }
    Ok(())
}

/// Splits a class-grouped index list into train/test with
/// `floor(n * train_fraction)` train rows spread evenly across the list, so
/// every class block contributes to both sides in proportion.
fn split_train_test(indices: Vec<usize>, train_fraction: f64) -> ClientShard {
    let mut shard = ClientShard::default();
    for (p, i) in indices.into_iter().enumerate() {
        let before = (p as f64 * train_fraction).floor();
        let after = ((p + 1) as f64 * train_fraction).floor();
        if after > before {
            shard.train.push(i);
        } else {
            shard.test.push(i);
        }
    }
    shard
}

/// Classes held by `client` under round-robin assignment of `k` classes each.
pub fn label_skew_classes(client: usize, k: usize, num_classes: usize) -> Vec<usize> {
    (0..k).map(|j| (client * k + j) % num_classes).collect()
}

/// Label-skew split: client `i` holds classes `(i*k + j) mod C` for
/// `j < k`. Each class's rows are shuffled and dealt as evenly as integer
/// division allows among the clients that hold it.
pub fn partition_label_skew(
    ds: &Dataset,
    num_clients: usize,
    k: usize,
    train_fraction: f64,
    stream: &mut RngStream,
) -> Result<Partition> {
    let c = ds.num_classes();
    if num_clients == 0 {
        return Err(Error::invalid("num_clients", "must be >= 1"));
    }
    if k == 0 || k > c {
        return Err(Error::Partition(format!(
            "classes_per_client {k} must lie in [1, {c}]"
        )));
    }
    check_fraction(train_fraction)?;

    let mut owners = vec![Vec::new(); c];
    for client in 0..num_clients {
        for class in label_skew_classes(client, k, c) {
            owners[class].push(client);
        }
    }

    let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for (class, mut rows) in ds.indices_by_class().into_iter().enumerate() {
        let holders = &owners[class];
        if holders.is_empty() {
            continue;
        }
        if rows.len() < holders.len() {
            return Err(Error::Partition(format!(
                "class {class} has {} rows for {} clients",
                rows.len(),
                holders.len()
            )));
        }
        rows.shuffle(stream);
        let base = rows.len() / holders.len();
        let extra = rows.len() % holders.len();
        let mut start = 0;
        for (slot, &client) in holders.iter().enumerate() {
            let take = base + usize::from(slot < extra);
            per_client[client].extend_from_slice(&rows[start..start + take]);
            start += take;
        }
    }

    Ok(Partition {
        client_shards: per_client
            .into_iter()
            .map(|rows| split_train_test(rows, train_fraction))
            .collect(),
    })
}

/// Dirichlet label split: for every class, client proportions are drawn from
/// `Dirichlet(alpha)` and rows dealt accordingly (largest-remainder
/// rounding). The whole draw is repeated until every client holds at least
/// `min_samples` rows, up to `max_retries` attempts.
pub fn partition_dirichlet(
    ds: &Dataset,
    num_clients: usize,
    alpha: f64,
    min_samples: usize,
    max_retries: usize,
    train_fraction: f64,
    stream: &mut RngStream,
) -> Result<Partition> {
    if num_clients == 0 {
        return Err(Error::invalid("num_clients", "must be >= 1"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid("alpha", format!("must be > 0, got {alpha}")));
    }
    check_fraction(train_fraction)?;
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid("alpha", e.to_string()))?;
    let by_class = ds.indices_by_class();

    for _attempt in 0..max_retries.max(1) {
        let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
        for rows in &by_class {
            let mut rows = rows.clone();
            rows.shuffle(stream);
            let mut weights: Vec<f64> = (0..num_clients).map(|_| gamma.sample(stream)).collect();
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                weights.iter_mut().for_each(|w| *w /= total);
            } else {
                let lucky = rand::Rng::random_range(stream, 0..num_clients);
                weights.iter_mut().enumerate().for_each(|(i, w)| {
                    *w = if i == lucky { 1.0 } else { 0.0 };
                });
            }
            let counts = largest_remainder(&weights, rows.len());
            let mut start = 0;
            for (client, take) in counts.into_iter().enumerate() {
                per_client[client].extend_from_slice(&rows[start..start + take]);
                start += take;
            }
        }
        if per_client.iter().all(|rows| rows.len() >= min_samples) {
            return Ok(Partition {
                client_shards: per_client
                    .into_iter()
                    .map(|rows| split_train_test(rows, train_fraction))
                    .collect(),
            });
        }
    }
    Err(Error::Partition(format!(
        "no Dirichlet(alpha = {alpha}) draw gave every client >= {min_samples} rows in {max_retries} attempts"
    )))
}

/// Rounds `weights * total` to integers summing to `total`; leftover units go
/// to the largest fractional parts, ties to the lower index.
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{predict, ModelSpec};
    use crate::param_space::ParamVector;
    use std::io::Write;

    fn idx_images(n: usize, rows: u32, cols: u32, pixel: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        out.extend_from_slice(&(n as u32).to_be_bytes());
        out.extend_from_slice(&rows.to_be_bytes());
        out.extend_from_slice(&cols.to_be_bytes());
        for i in 0..n * (rows * cols) as usize {
            out.push(pixel(i));
        }
        out
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    fn write(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path).unwrap().write_all(bytes).unwrap();
        path
    }

    #[test]
    fn idx_four_image_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(&dir, "img", &idx_images(4, 28, 28, |i| (i % 256) as u8));
        let lab = write(&dir, "lab", &idx_labels(&[3, 1, 4, 1]));
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.dim(), 784);
        assert_eq!(ds.labels(), &[3, 1, 4, 1]);
        assert_eq!(ds.num_classes(), 5);
        // pixel i of row r is ((r * 784 + i) % 256) / 255
        assert_eq!(ds.row(1)[0], ((784 % 256) as f64) / 255.0);
    }

    #[test]
    fn idx_scaling_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(&dir, "img", &idx_images(1, 1, 2, |i| if i == 0 { 255 } else { 0 }));
        let lab = write(&dir, "lab", &idx_labels(&[0]));
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(&dir, "img", &idx_images(3, 2, 2, |_| 7));
        let lab2 = write(&dir, "lab2", &idx_labels(&[0, 1]));
        assert!(matches!(
            load_idx(&img, &lab2),
            Err(Error::IdxCountMismatch { images: 3, labels: 2 })
        ));

        let mut swapped = idx_labels(&[0, 1, 2]);
        swapped[3] = 0x03;
        let bad = write(&dir, "bad", &swapped);
        assert!(matches!(load_idx(&img, &bad), Err(Error::IdxMagic { .. })));
        assert!(matches!(load_idx(&lab2, &lab2), Err(Error::IdxMagic { .. })));

        let mut short = idx_images(3, 2, 2, |_| 7);
        short.truncate(20);
        let short = write(&dir, "short", &short);
        let lab3 = write(&dir, "lab3", &idx_labels(&[0, 1, 2]));
        assert!(matches!(load_idx(&short, &lab3), Err(Error::IdxTruncated { .. })));

        let tiny = write(&dir, "tiny", &[0, 0]);
        assert!(matches!(load_idx(&tiny, &lab3), Err(Error::IdxTruncated { .. })));
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth_generate(4, 25, 6, 2.0, &mut RngStream::new(1, 7)).unwrap();
        let b = synth_generate(4, 25, 6, 2.0, &mut RngStream::new(1, 7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![25; 4]);
        assert!(a.features.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    fn blobs_split(num_classes: usize, per_class: usize, dim: usize, sep: f64, seed: u64)
        -> (Dataset, Vec<usize>, Vec<usize>)
    {
        let ds = synth_generate(num_classes, per_class, dim, sep, &mut RngStream::new(seed, 0)).unwrap();
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        idx.shuffle(&mut RngStream::new(seed, 1));
        let cut = idx.len() * 3 / 4;
        let test = idx.split_off(cut);
        (ds, idx, test)
    }

    fn train_mclr(ds: &Dataset, train: &[usize], steps: usize, lr: f64) -> ParamVector {
        let spec = ModelSpec::mclr(ds.dim(), ds.num_classes());
        let batch = ds.batch(train);
        let mut p = ParamVector::zeros(spec.parameter_count());
        for _ in 0..steps {
            let g = crate::models::gradient(&spec, &p, &batch).unwrap();
            p.axpy(-lr, &g);
        }
        p
    }

    fn accuracy(ds: &Dataset, p: &ParamVector, rows: &[usize]) -> f64 {
        let spec = ModelSpec::mclr(ds.dim(), ds.num_classes());
        let batch = ds.batch(rows);
        let preds = predict(&spec, p, &batch).unwrap();
        preds.iter().zip(batch.labels()).filter(|(a, b)| a == b).count() as f64 / rows.len() as f64
    }

    #[test]
    fn zero_separation_is_chance_level() {
        let (ds, train, test) = blobs_split(4, 500, 10, 0.0, 3);
        let p = train_mclr(&ds, &train, 300, 1.0);
        let acc = accuracy(&ds, &p, &test);
        assert!((acc - 0.25).abs() <= 0.05, "acc {acc}");
    }

    #[test]
    fn large_separation_is_linearly_separable() {
        let (ds, train, _) = blobs_split(5, 100, 20, 6.0, 4);
        let p = train_mclr(&ds, &train, 500, 5.0);
        let acc = accuracy(&ds, &p, &train);
        assert!(acc >= 0.95, "acc {acc}");
    }

    fn blobs(per_class: usize) -> Dataset {
        synth_generate(10, per_class, 4, 1.0, &mut RngStream::new(5, 0)).unwrap()
    }

    #[test]
    fn label_skew_counts() {
        let ds = blobs(60);
        let part = partition_label_skew(&ds, 100, 3, 0.75, &mut RngStream::new(1, 0)).unwrap();
        part.validate(&ds).unwrap();
        let mut appearances = [0usize; 10];
        for client in 0..100 {
            let labels = part.client_labels(&ds, client);
            assert_eq!(labels.len(), 3);
            for l in labels {
                appearances[l] += 1;
            }
        }
        assert_eq!(appearances, [30; 10]);
        // every row is used: 600 rows over 30 holders per class, 2 each
        let total: usize = part.client_shards.iter().map(ClientShard::len).sum();
        assert_eq!(total, ds.len());
    }

    #[test]
    fn label_skew_single_client_holds_everything() {
        let ds = blobs(7);
        let part = partition_label_skew(&ds, 1, 10, 0.75, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(part.client_shards[0].len(), ds.len());
        assert_eq!(part.client_labels(&ds, 0), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn single_label_clients_make_constant_predictors_perfect() {
        let ds = blobs(20);
        let part = partition_label_skew(&ds, 10, 1, 0.5, &mut RngStream::new(2, 0)).unwrap();
        let spec = ModelSpec::mclr(ds.dim(), ds.num_classes());
        for client in 0..10 {
            let label = part.client_labels(&ds, client)[0];
            let mut p = vec![0.0; spec.parameter_count()];
            p[spec.output_bias_range().start + label] = 1.0;
            let p = ParamVector::new(p).unwrap();
            assert_eq!(accuracy(&ds, &p, &part.client_shards[client].test), 1.0);
        }
    }

    #[test]
    fn label_skew_rejects_too_many_classes() {
        let ds = blobs(5);
        assert!(partition_label_skew(&ds, 3, 11, 0.75, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn train_fraction_within_one_example() {
        let ds = blobs(37);
        for frac in [0.75, 0.5, 0.9, 1.0] {
            let part = partition_label_skew(&ds, 7, 3, frac, &mut RngStream::new(3, 0)).unwrap();
            for shard in &part.client_shards {
                let target = shard.len() as f64 * frac;
                assert!((shard.train.len() as f64 - target).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn dirichlet_large_alpha_is_near_uniform() {
        let ds = blobs(1000);
        let part =
            partition_dirichlet(&ds, 10, 1e6, 1, 10, 1.0, &mut RngStream::new(4, 0)).unwrap();
        part.validate(&ds).unwrap();
        for client in 0..10 {
            let shard = &part.client_shards[client];
            let mut hist = [0usize; 10];
            for &i in &shard.train {
                hist[ds.labels()[i]] += 1;
            }
            let n = shard.train.len() as f64;
            for h in hist {
                let rel = (h as f64 / n - 0.1).abs() / 0.1;
                assert!(rel <= 0.10, "relative deviation {rel}");
            }
        }
    }

    #[test]
    fn dirichlet_small_alpha_covers_dataset() {
        let ds = blobs(100);
        let part =
            partition_dirichlet(&ds, 10, 0.5, 10, 200, 0.75, &mut RngStream::new(5, 0)).unwrap();
        part.validate(&ds).unwrap();
        assert!(part.client_shards.iter().all(|s| s.len() >= 10));
        let total: usize = part.client_shards.iter().map(ClientShard::len).sum();
        assert_eq!(total, ds.len());

        let again =
            partition_dirichlet(&ds, 10, 0.5, 10, 200, 0.75, &mut RngStream::new(5, 0)).unwrap();
        assert_eq!(part, again);
    }

    #[test]
    fn dirichlet_unsatisfiable_min_samples_errors() {
        let ds = blobs(10);
        let err = partition_dirichlet(&ds, 10, 0.5, 50, 5, 0.75, &mut RngStream::new(6, 0));
        assert!(matches!(err, Err(Error::Partition(_))));
    }

    #[test]
    fn largest_remainder_sums() {
        assert_eq!(largest_remainder(&[0.5, 0.25, 0.25], 5), vec![3, 1, 1]);
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 10).iter().sum::<usize>(), 10);
    }
}
