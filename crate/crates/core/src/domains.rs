//! Multi-domain datasets, per-domain minibatch sampling, and per-domain
//! loss aggregation.
//!
//! Every domain draws its minibatch from its own ChaCha stream derived from
//! the run seed, so the batches of one domain never depend on how many
//! draws another domain made. Per-domain results are always reduced in
//! domain-index order, so the thread count never changes a result.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{Example, LossOracle, ModelParameters};
use crate::simplex::LossVector;

/// Environment variable capping per-domain evaluation threads.
pub const THREADS_ENV: &str = "ROBUST_DOMAINS_THREADS";

/// One domain `S_k`: `n` rows of `d` features with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub name: String,
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Domain {
    pub fn new(name: impl Into<String>, dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let name = name.into();
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::InvalidDataset(format!(
                "domain '{name}': {} feature values for {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "domain '{name}' has non-finite features"
            )));
        }
        Ok(Self {
            name,
            dim,
            features,
            labels,
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

    pub fn example(&self, i: usize) -> Example<'_> {
        Example {
            features: &self.features[i * self.dim..(i + 1) * self.dim],
            label: self.labels[i],
        }
    }

    pub fn examples(&self) -> Vec<Example<'_>> {
        (0..self.len()).map(|i| self.example(i)).collect()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// The datasets `{S_1, …, S_K}` sharing feature dimension and label range.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDomainDataset {
    domains: Vec<Domain>,
    dim: usize,
    num_classes: usize,
}

impl MultiDomainDataset {
    pub fn new(domains: Vec<Domain>, num_classes: usize) -> Result<Self> {
        let Some(first) = domains.first() else {
            return Err(Error::InvalidDataset("no domains".into()));
        };
        let dim = first.dim;
        for domain in &domains {
            if domain.is_empty() {
                return Err(Error::InvalidDataset(format!("domain '{}' is empty", domain.name)));
            }
            if domain.dim != dim {
                return Err(Error::InvalidDataset(format!(
                    "domain '{}' has dimension {}, expected {dim}",
                    domain.name, domain.dim
                )));
            }
            if let Some(label) = domain.labels.iter().find(|y| **y >= num_classes) {
                return Err(Error::InvalidDataset(format!(
                    "domain '{}' has label {label} outside [0, {num_classes})",
                    domain.name
                )));
            }
        }
        Ok(Self {
            domains,
            dim,
            num_classes,
        })
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn domain(&self, k: usize) -> &Domain {
        &self.domains[k]
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn names(&self) -> Vec<&str> {
        self.domains.iter().map(|d| d.name.as_str()).collect()
    }

    /// The single-domain dataset `{S_k}`.
    pub fn subset(&self, k: usize) -> Result<Self> {
        if k >= self.num_domains() {
            return Err(Error::Config(format!(
                "domain index {k} out of range for {} domains",
                self.num_domains()
            )));
        }
        Self::new(vec![self.domains[k].clone()], self.num_classes)
    }

    /// The dataset with domains reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let domains = order
            .iter()
            .map(|&k| {
                self.domains
                    .get(k)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput(format!("no domain {k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(domains, self.num_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Uniform draws with replacement.
    WithReplacement,
    /// Sequential draws from a per-domain shuffle, reshuffled when exhausted.
    WithoutReplacement,
}

/// How per-domain streams are keyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKeying {
    /// Each domain uses the stream named by a hash of its name, so the
    /// batches of a domain do not depend on its position.
    PerDomain,
    /// Every domain uses stream 0, so equal-size domains draw identical
    /// index sequences.
    Shared,
}

/// A joint minibatch: `m` row indices per domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainBatch {
    pub per_domain: Vec<Vec<usize>>,
    pub iteration: usize,
}

impl DomainBatch {
    /// A batch holding every row of every domain once.
    pub fn full(data: &MultiDomainDataset) -> Self {
        Self {
            per_domain: data.domains.iter().map(|d| (0..d.len()).collect()).collect(),
            iteration: 0,
        }
    }

    pub fn examples<'a>(&self, data: &'a MultiDomainDataset, k: usize) -> Vec<Example<'a>> {
        let domain = data.domain(k);
        self.per_domain[k].iter().map(|&i| domain.example(i)).collect()
    }

    pub fn total_size(&self) -> usize {
        self.per_domain.iter().map(Vec::len).sum()
    }
}

/// Seeded per-domain minibatch sampler.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    batch_per_domain: usize,
    mode: SamplingMode,
    streams: Vec<ChaCha8Rng>,
    permutations: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    iteration: usize,
}

impl BatchSampler {
    pub fn new(
        data: &MultiDomainDataset,
        batch_per_domain: usize,
        seed: u64,
        mode: SamplingMode,
        keying: StreamKeying,
    ) -> Result<Self> {
        if batch_per_domain == 0 {
            return Err(Error::Config("minibatch size per domain must be at least 1".into()));
        }
        let streams = data
            .domains
            .iter()
            .map(|domain| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(match keying {
                    StreamKeying::PerDomain => stream_id(&domain.name),
                    StreamKeying::Shared => 0,
                });
                rng
            })
            .collect();
        Ok(Self {
            batch_per_domain,
            mode,
            streams,
            permutations: data.domains.iter().map(|d| (0..d.len()).collect()).collect(),
            cursors: vec![usize::MAX; data.num_domains()],
            iteration: 0,
        })
    }

    pub fn batch_per_domain(&self) -> usize {
        self.batch_per_domain
    }

    /// Draws the next joint minibatch.
    pub fn sample(&mut self, data: &MultiDomainDataset) -> Result<DomainBatch> {
        if data.num_domains() != self.streams.len() {
            return Err(Error::InvalidInput(format!(
                "sampler built for {} domains, dataset has {}",
                self.streams.len(),
                data.num_domains()
            )));
        }
        self.iteration += 1;
        let m = self.batch_per_domain;
        let mut per_domain = Vec::with_capacity(self.streams.len());
        for (k, rng) in self.streams.iter_mut().enumerate() {
            let n = data.domain(k).len();
            if n == 0 {
                return Err(Error::InvalidDataset(format!("domain {k} is empty")));
            }
            let draws = match self.mode {
                SamplingMode::WithReplacement => (0..m).map(|_| rng.random_range(0..n)).collect(),
                SamplingMode::WithoutReplacement => {
                    let perm = &mut self.permutations[k];
                    let cursor = &mut self.cursors[k];
                    let mut out = Vec::with_capacity(m);
                    while out.len() < m {
                        if *cursor >= perm.len() {
                            perm.shuffle(rng);
                            *cursor = 0;
                        }
                        out.push(perm[*cursor]);
                        *cursor += 1;
                    }
                    out
                }
            };
            per_domain.push(draws);
        }
        Ok(DomainBatch {
            per_domain,
            iteration: self.iteration,
        })
    }
}

/// FNV-1a hash of a domain name, with the top bit cleared so it never
/// collides with the initialization stream.
fn stream_id(name: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash >> 1
}

/// Threads for per-domain evaluation from [`THREADS_ENV`]; defaults to 1.
pub fn evaluation_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .unwrap_or(1)
}

/// Evaluates `f(k)` for every domain on up to `threads` threads and returns
/// the results in domain order.
pub fn map_domains<T, F>(num_domains: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.clamp(1, num_domains.max(1));
    if threads == 1 {
        return (0..num_domains).map(f).collect();
    }
    let chunk = num_domains.div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..num_domains)
            .step_by(chunk)
            .map(|start| {
                let f = &f;
                scope.spawn(move || (start..(start + chunk).min(num_domains)).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("domain worker panicked"))
            .collect()
    })
}

fn check_model(data: &MultiDomainDataset, model: &dyn LossOracle) -> Result<()> {
    let (dim, classes) = match model.spec() {
        crate::models::ModelSpec::Softmax { input_dim, num_classes } => (input_dim, num_classes),
        crate::models::ModelSpec::Mlp {
            input_dim, num_classes, ..
        } => (input_dim, num_classes),
    };
    if dim != data.dim() || classes != data.num_classes() {
        return Err(Error::InvalidInput(format!(
            "model expects d={dim} C={classes}, dataset has d={} C={}",
            data.dim(),
            data.num_classes()
        )));
    }
    Ok(())
}

/// Exact per-domain empirical risks `f_k(W)` over the full data.
pub fn empirical_loss_vector(
    data: &MultiDomainDataset,
    model: &dyn LossOracle,
    params: &ModelParameters,
) -> Result<LossVector> {
    check_model(data, model)?;
    let losses = map_domains(data.num_domains(), evaluation_threads(), |k| {
        model.mean_loss(params, &data.domain(k).examples())
    });
    Ok(LossVector::new(losses.into_iter().collect::<Result<Vec<_>>>()?))
}

/// Minibatch losses `f̂_k^t(W)`.
pub fn batch_loss_vector(
    data: &MultiDomainDataset,
    batch: &DomainBatch,
    model: &dyn LossOracle,
    params: &ModelParameters,
) -> Result<LossVector> {
    check_model(data, model)?;
    let losses = map_domains(data.num_domains(), evaluation_threads(), |k| {
        model.mean_loss(params, &batch.examples(data, k))
    });
    Ok(LossVector::new(losses.into_iter().collect::<Result<Vec<_>>>()?))
}

/// Per-domain minibatch losses and their gradients.
pub fn batch_loss_gradients(
    data: &MultiDomainDataset,
    batch: &DomainBatch,
    model: &dyn LossOracle,
    params: &ModelParameters,
) -> Result<(LossVector, Vec<Vec<f64>>)> {
    check_model(data, model)?;
    let results = map_domains(data.num_domains(), evaluation_threads(), |k| {
        model.loss_gradient(params, &batch.examples(data, k))
    });
    let mut losses = Vec::with_capacity(results.len());
    let mut grads = Vec::with_capacity(results.len());
    for result in results {
        let (loss, grad) = result?;
        losses.push(loss);
        grads.push(grad);
    }
    Ok((LossVector::new(losses), grads))
}

/// Per-domain accuracy over the full data.
pub fn accuracy_vector(
    data: &MultiDomainDataset,
    model: &dyn LossOracle,
    params: &ModelParameters,
) -> Result<Vec<f64>> {
    check_model(data, model)?;
    map_domains(data.num_domains(), evaluation_threads(), |k| {
        let domain = data.domain(k);
        let mut correct = 0usize;
        for example in domain.examples() {
            if model.predict(params, example.features)? == example.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / domain.len() as f64)
    })
    .into_iter()
    .collect()
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

const DELIMITERS: [char; 4] = [',', ';', '\t', ' '];

fn split_fields(line: &str) -> Vec<&str> {
    line.split(DELIMITERS).filter(|s| !s.is_empty()).collect()
}

/// Parses a domain file: one row per example, label first, then `dim`
/// features; an optional non-numeric header row is skipped.
pub fn parse_domain(name: &str, text: &str, dim: usize, num_classes: usize, path: &Path) -> Result<Domain> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut seen_row = false;
    for (idx, line) in text.lines().enumerate() {
        let fields = split_fields(line.trim());
        if fields.is_empty() {
            continue;
        }
        let parse_error = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        if !seen_row && fields[0].parse::<f64>().is_err() {
            seen_row = true;
            continue;
        }
        seen_row = true;
        if fields.len() != dim + 1 {
            return Err(parse_error(format!(
                "expected label and {dim} features, found {} fields",
                fields.len()
            )));
        }
        let label: f64 = fields[0]
            .parse()
            .map_err(|_| parse_error(format!("bad label '{}'", fields[0])))?;
        if label < 0.0 || label.fract() != 0.0 || label >= num_classes as f64 {
            return Err(parse_error(format!(
                "label {label} is not an integer in [0, {num_classes})"
            )));
        }
        labels.push(label as usize);
        for field in &fields[1..] {
            features.push(
                field
                    .parse::<f64>()
                    .map_err(|_| parse_error(format!("bad number '{field}'")))?,
            );
        }
    }
    Domain::new(name, dim, features, labels)
}

/// Renders a domain file with a header row and 17 significant digits.
pub fn render_domain(domain: &Domain) -> String {
    let mut out = String::from("label");
    for j in 0..domain.dim() {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for i in 0..domain.len() {
        let example = domain.example(i);
        out.push_str(&example.label.to_string());
        for x in example.features {
            out.push_str(&format!(",{x:.16e}"));
        }
        out.push('\n');
    }
    out
}

/// Dataset description: class count, feature dimension, and one
/// `domain = <name>,<file>` line per domain (files relative to the
/// manifest's directory).
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub num_classes: usize,
    pub dim: usize,
    pub domains: Vec<(String, PathBuf)>,
}

impl Manifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut num_classes = None;
        let mut dim = None;
        let mut domains = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_error = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_error(format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "classes" => {
                    num_classes = Some(
                        value
                            .parse()
                            .map_err(|_| parse_error(format!("bad class count '{value}'")))?,
                    )
                }
                "dim" => {
                    dim = Some(
                        value
                            .parse()
                            .map_err(|_| parse_error(format!("bad dimension '{value}'")))?,
                    )
                }
                "domain" => {
                    let (name, file) = value
                        .split_once(',')
                        .ok_or_else(|| parse_error("domain lines read 'domain = <name>,<file>'".into()))?;
                    domains.push((name.trim().to_string(), PathBuf::from(file.trim())));
                }
                other => return Err(parse_error(format!("unknown manifest key '{other}'"))),
            }
        }
        let missing = |what: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("manifest lacks '{what}'"),
        };
        Ok(Self {
            num_classes: num_classes.ok_or_else(|| missing("classes"))?,
            dim: dim.ok_or_else(|| missing("dim"))?,
            domains,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::from("# robust-domains manifest\n");
        out.push_str(&format!("classes = {}\n", self.num_classes));
        out.push_str(&format!("dim = {}\n", self.dim));
        for (name, file) in &self.domains {
            out.push_str(&format!("domain = {},{}\n", name, file.display()));
        }
        out
    }
}

/// Loads every domain listed in the manifest at `path`.
pub fn load_dataset(path: &Path) -> Result<MultiDomainDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = Manifest::parse(&text, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut domains = Vec::with_capacity(manifest.domains.len());
    for (name, file) in &manifest.domains {
        let file_path = base.join(file);
        let body = fs::read_to_string(&file_path).map_err(|e| Error::io(&file_path, e))?;
        domains.push(parse_domain(
            name,
            &body,
            manifest.dim,
            manifest.num_classes,
            &file_path,
        )?);
    }
    MultiDomainDataset::new(domains, manifest.num_classes)
}

/// Writes a manifest plus one `domain_<k>.csv` per domain into `dir`.
pub fn write_dataset(dir: &Path, data: &MultiDomainDataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest {
        num_classes: data.num_classes(),
        dim: data.dim(),
        domains: Vec::new(),
    };
    for (k, domain) in data.domains().iter().enumerate() {
        let file = PathBuf::from(format!("domain_{k}.csv"));
        let path = dir.join(&file);
        fs::write(&path, render_domain(domain)).map_err(|e| Error::io(&path, e))?;
        manifest.domains.push((domain.name.clone(), file));
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
