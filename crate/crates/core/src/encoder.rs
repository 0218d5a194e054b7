//! Toy sentence encoder: token-embedding lookup, inverted dropout, mean
//! pooling, affine projection, tanh. Also the sentence-vector file formats
//! used to feed externally computed embeddings into retrieval.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `[vocab_size × d]`
    pub token_embeddings: Array2<f64>,
    /// `[d × d]`
    pub projection: Array2<f64>,
    pub bias: Array1<f64>,
}

impl EncoderParams {
    /// Embeddings ~ U(-0.1, 0.1); projection = identity + U(-0.01, 0.01); zero bias.
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || vocab_size == 0 {
            return Err(Error::invalid("encoder needs dim >= 1 and a non-empty vocabulary"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let token_embeddings = Array2::from_shape_simple_fn((vocab_size, dim), || rng.gen_range(-0.1..0.1));
        let mut projection = Array2::from_shape_simple_fn((dim, dim), || rng.gen_range(-0.01..0.01));
        for i in 0..dim {
            projection[[i, i]] += 1.0;
        }
        Ok(Self {
            token_embeddings,
            projection,
            bias: Array1::zeros(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embeddings.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.token_embeddings.ncols() != d || self.projection.dim() != (d, d) {
            return Err(Error::invalid("inconsistent encoder parameter shapes"));
        }
        let finite = self.token_embeddings.iter().chain(self.projection.iter()).chain(self.bias.iter());
        if !finite.into_iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("encoder parameters contain non-finite values"));
        }
        Ok(())
    }

    /// Writes the embedding table in the binary vector format (ids are token
    /// ids) followed by the projection block. Values are stored as f32.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ids: Vec<u64> = (0..self.vocab_size() as u64).collect();
        let table = VectorSet::new(ids, self.token_embeddings.mapv(|v| v as f32))?;
        let mut buf = table.to_binary();
        buf.extend_from_slice(PROJECTION_MAGIC);
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        for v in self.projection.iter().chain(self.bias.iter()) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (table, used) = VectorSet::from_binary_prefix(&bytes, path)?;
        let rest = &bytes[used..];
        if rest.len() < 16 || &rest[..8] != PROJECTION_MAGIC {
            return Err(Error::parse(path, 0, "missing projection block"));
        }
        let d = u32::from_le_bytes(rest[8..12].try_into().unwrap()) as usize;
        if d != table.dim() {
            return Err(Error::parse(path, 0, "projection dimension differs from embedding dimension"));
        }
        let floats = read_f32s(&rest[16..], d * d + d, path)?;
        let projection = Array2::from_shape_vec((d, d), floats[..d * d].iter().map(|&v| v as f64).collect())
            .expect("shape checked");
        let bias = floats[d * d..].iter().map(|&v| v as f64).collect();
        let params = Self {
            token_embeddings: table.matrix.mapv(|v| v as f64),
            projection,
            bias,
        };
        params.validate()?;
        Ok(params)
    }
}

const PROJECTION_MAGIC: &[u8; 8] = b"CARDSPRJ";

/// An encoded sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceVector(pub Array1<f64>);

impl SentenceVector {
    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn norm(&self) -> f64 {
        self.0.dot(&self.0).sqrt()
    }

    pub fn cosine(&self, other: &SentenceVector) -> f64 {
        self.0.dot(&other.0) / (self.norm() * other.norm())
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    ids: Vec<u32>,
    /// Per-token inverted-dropout scales `[T × d]`; `None` when dropout is off.
    mask: Option<Array2<f64>>,
    pooled: Array1<f64>,
    output: Array1<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> SentenceVector {
        SentenceVector(self.output.clone())
    }
}

fn dropout_mask(tokens: usize, dim: usize, rate: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((tokens, dim), || if rng.gen::<f64>() < rate { 0.0 } else { scale })
}

pub fn forward_cached(
    params: &EncoderParams,
    ids: &[u32],
    dropout_rate: f64,
    dropout_seed: Option<u64>,
) -> Result<ForwardCache> {
    if ids.is_empty() {
        return Err(Error::invalid("cannot encode an empty token sequence"));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {dropout_rate}")));
    }
    let vocab = params.vocab_size();
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab) {
        return Err(Error::invalid(format!("token id {bad} outside vocabulary of {vocab}")));
    }
    let d = params.dim();
    let mask = match dropout_seed {
        Some(seed) if dropout_rate > 0.0 => Some(dropout_mask(ids.len(), d, dropout_rate, seed)),
        _ => None,
    };
    let mut pooled = Array1::<f64>::zeros(d);
    for (t, &id) in ids.iter().enumerate() {
        let row = params.token_embeddings.row(id as usize);
        match &mask {
            Some(m) => pooled.zip_mut_with(&(&row * &m.row(t)), |p, v| *p += v),
            None => pooled += &row,
        }
    }
    pooled /= ids.len() as f64;
    let output = (params.projection.dot(&pooled) + &params.bias).mapv(f64::tanh);
    Ok(ForwardCache {
        ids: ids.to_vec(),
        mask,
        pooled,
        output,
    })
}

/// Encodes a token sequence. `dropout_seed = None` disables dropout.
pub fn forward(
    params: &EncoderParams,
    ids: &[u32],
    dropout_rate: f64,
    dropout_seed: Option<u64>,
) -> Result<SentenceVector> {
    forward_cached(params, ids, dropout_rate, dropout_seed).map(|c| c.output())
}

/// Two passes over the same input differing only in the dropout seed.
pub fn forward_pair(
    params: &EncoderParams,
    ids: &[u32],
    dropout_rate: f64,
    seed_a: u64,
    seed_b: u64,
) -> Result<(SentenceVector, SentenceVector)> {
    if seed_a == seed_b {
        return Err(Error::Contract("forward_pair needs two distinct dropout seeds".into()));
    }
    Ok((
        forward(params, ids, dropout_rate, Some(seed_a))?,
        forward(params, ids, dropout_rate, Some(seed_b))?,
    ))
}

/// Parameter gradients; embedding rows are stored sparsely.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub token_embeddings: BTreeMap<u32, Array1<f64>>,
    pub projection: Array2<f64>,
    pub bias: Array1<f64>,
}

impl EncoderGrads {
    pub fn zeros(dim: usize) -> Self {
        Self {
            token_embeddings: BTreeMap::new(),
            projection: Array2::zeros((dim, dim)),
            bias: Array1::zeros(dim),
        }
    }

    /// `params -= lr * grads`
    pub fn apply_sgd(&self, params: &mut EncoderParams, lr: f64) {
        for (&id, g) in &self.token_embeddings {
            params
                .token_embeddings
                .row_mut(id as usize)
                .scaled_add(-lr, g);
        }
        params.projection.scaled_add(-lr, &self.projection);
        params.bias.scaled_add(-lr, &self.bias);
    }
}

/// Accumulates into `grads` the gradient of a scalar loss with respect to the
/// parameters, given `grad_output = dL/dh` for the pass recorded in `cache`.
pub fn backward(params: &EncoderParams, cache: &ForwardCache, grad_output: ArrayView1<'_, f64>, grads: &mut EncoderGrads) {
    let dz = &grad_output * &cache.output.mapv(|h| 1.0 - h * h);
    let dz_col = dz.view().insert_axis(Axis(1));
    let pooled_row = cache.pooled.view().insert_axis(Axis(0));
    grads.projection += &dz_col.dot(&pooled_row);
    grads.bias += &dz;
    let dpooled = params.projection.t().dot(&dz) / cache.ids.len() as f64;
    for (t, &id) in cache.ids.iter().enumerate() {
        let contribution = match &cache.mask {
            Some(m) => &dpooled * &m.row(t),
            None => dpooled.clone(),
        };
        grads
            .token_embeddings
            .entry(id)
            .and_modify(|g| *g += &contribution)
            .or_insert(contribution);
    }
}

/// Sentence vectors with stable row ids, stored as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    pub ids: Vec<u64>,
    pub matrix: Array2<f32>,
}

const VECTOR_MAGIC: &[u8; 8] = b"CARDSVEC";

fn read_f32s(bytes: &[u8], count: usize, path: &Path) -> Result<Vec<f32>> {
    if bytes.len() < count * 4 {
        return Err(Error::parse(path, 0, "file truncated"));
    }
    Ok(bytes[..count * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl VectorSet {
    pub fn new(ids: Vec<u64>, matrix: Array2<f32>) -> Result<Self> {
        if ids.len() != matrix.nrows() {
            return Err(Error::invalid(format!(
                "{} ids for {} vectors",
                ids.len(),
                matrix.nrows()
            )));
        }
        Ok(Self { ids, matrix })
    }

    pub fn from_f64(ids: Vec<u64>, matrix: &Array2<f64>) -> Result<Self> {
        Self::new(ids, matrix.mapv(|v| v as f32))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Text format: `n d` header, then `id v_1 .. v_d` per row.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim());
        for (id, row) in self.ids.iter().zip(self.matrix.rows()) {
            out.push_str(&id.to_string());
            for v in row {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty vector file"))?;
        let mut head = header.split_whitespace().map(str::parse::<usize>);
        let (n, d) = match (head.next(), head.next(), head.next()) {
            (Some(Ok(n)), Some(Ok(d)), None) => (n, d),
            _ => return Err(Error::parse(path, 1, format!("expected `n d` header, got {header:?}"))),
        };
        let mut ids = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * d);
        for (idx, line) in lines {
            let line_no = idx + 1;
            let mut fields = line.split_whitespace();
            let id = fields
                .next()
                .and_then(|f| f.parse::<u64>().ok())
                .ok_or_else(|| Error::parse(path, line_no, "row must start with an integer id"))?;
            let before = data.len();
            for f in fields {
                data.push(
                    f.parse::<f32>()
                        .map_err(|_| Error::parse(path, line_no, format!("{f:?} is not a number")))?,
                );
            }
            if data.len() - before != d {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("row has {} values, expected {d}", data.len() - before),
                ));
            }
            ids.push(id);
        }
        if ids.len() != n {
            return Err(Error::parse(path, 1, format!("header declares {n} rows, found {}", ids.len())));
        }
        Self::new(ids, Array2::from_shape_vec((n, d), data).expect("sizes checked"))
    }

    /// Binary format: 16-byte header (`CARDSVEC`, n: u32, d: u32), n u64 ids,
    /// then n·d f32 values row-major, all little-endian.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.len() * (8 + 4 * self.dim()));
        buf.extend_from_slice(VECTOR_MAGIC);
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for id in &self.ids {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        for v in self.matrix.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    fn from_binary_prefix(bytes: &[u8], path: &Path) -> Result<(Self, usize)> {
        if bytes.len() < 16 || &bytes[..8] != VECTOR_MAGIC {
            return Err(Error::parse(path, 0, "not a binary vector file"));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let ids_end = 16 + 8 * n;
        if bytes.len() < ids_end {
            return Err(Error::parse(path, 0, "file truncated"));
        }
        let ids = bytes[16..ids_end]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let data = read_f32s(&bytes[ids_end..], n * d, path)?;
        let set = Self::new(ids, Array2::from_shape_vec((n, d), data).expect("sizes checked"))?;
        Ok((set, ids_end + 4 * n * d))
    }

    pub fn from_binary(bytes: &[u8], path: &Path) -> Result<Self> {
        let (set, used) = Self::from_binary_prefix(bytes, path)?;
        if used != bytes.len() {
            return Err(Error::parse(path, 0, "trailing bytes after vector data"));
        }
        Ok(set)
    }

    /// Loads either format, detected by the binary magic.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(VECTOR_MAGIC) {
            Self::from_binary(&bytes, path)
        } else {
            let text = String::from_utf8(bytes).map_err(|_| Error::parse(path, 0, "vector file is neither binary nor UTF-8 text"))?;
            Self::parse_text(&text, path)
        }
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_binary()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a vector file in either format, returning ids and the row-major matrix.
pub fn load_vectors(path: &Path) -> Result<(Vec<u64>, Array2<f32>)> {
    let set = VectorSet::load(path)?;
    Ok((set.ids, set.matrix))
}
