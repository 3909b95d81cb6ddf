//! NF4 blockwise quantization, LoRA deltas, masked NLL and the binary
//! decision head.
//!
//! Quantization normalizes each group by its own mean and population
//! standard deviation, `ŵ = (w − μ_g) / σ_g`, snaps `ŵ` to the nearest
//! codebook level and reconstructs `w̃ = σ_g·c_k + μ_g`.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GROUP_SIZE: usize = 64;
pub const LEVELS: usize = 16;
pub const MAGIC: &[u8; 6] = b"SAECQ1";

/// The 16 canonical NormalFloat4 levels.
pub const NF4_LEVELS: [f64; LEVELS] = [
    -1.0,
    -0.696_192_800_998_687_7,
    -0.525_073_051_452_636_7,
    -0.394_917_488_098_144_53,
    -0.284_441_381_692_886_35,
    -0.184_773_430_228_233_34,
    -0.091_050_036_251_544_95,
    0.0,
    0.079_580_299_556_255_34,
    0.160_930_201_411_247_25,
    0.246_112_301_945_686_34,
    0.337_915_241_718_292_24,
    0.440_709_829_330_444_34,
    0.562_617_003_917_694_1,
    0.722_956_836_223_602_3,
    1.0,
];

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("input matrix is empty")]
    EmptyInput,
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
    #[error("group size must be at least 1")]
    InvalidGroupSize,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence lengths differ: {0} log-probs vs {1} mask entries")]
    LengthMismatch(usize, usize),
    #[error("non-finite logit {0}")]
    NonFiniteLogit(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed tensor file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, QuantError> {
        if data.len() != rows * cols {
            return Err(QuantError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, QuantError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(QuantError::ShapeMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, QuantError> {
        if self.cols != rhs.rows {
            return Err(QuantError::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out.data[i * rhs.cols..(i + 1) * rhs.cols]
                    .iter_mut()
                    .zip(row)
                {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    fn scale_add(&mut self, other: &Matrix, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }
}

/// A 16-level quantization codebook: strictly increasing, containing zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    levels: [f64; LEVELS],
    zero_index: usize,
}

impl Codebook {
    pub fn new(levels: [f64; LEVELS]) -> Result<Self, QuantError> {
        if levels.iter().any(|v| !v.is_finite()) {
            return Err(QuantError::InvalidCodebook("levels must be finite".into()));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QuantError::InvalidCodebook(
                "levels must be strictly increasing".into(),
            ));
        }
        let zero_index = levels
            .iter()
            .position(|&v| v == 0.0)
            .ok_or_else(|| QuantError::InvalidCodebook("levels must contain 0".into()))?;
        Ok(Self { levels, zero_index })
    }

    pub fn nf4() -> Self {
        Self::new(NF4_LEVELS).expect("NF4 levels are valid")
    }

    pub fn levels(&self) -> &[f64; LEVELS] {
        &self.levels
    }

    pub fn zero_index(&self) -> usize {
        self.zero_index
    }

    /// Index of the level nearest to `x`; ties go to the smaller index.
    pub fn nearest(&self, x: f64) -> u8 {
        // Levels are sorted, so the nearest one is adjacent to the insertion point.
        let hi = self.levels.partition_point(|&c| c < x);
        if hi == 0 {
            return 0;
        }
        if hi == LEVELS {
            return (LEVELS - 1) as u8;
        }
        let lo = hi - 1;
        if (x - self.levels[lo]).abs() <= (self.levels[hi] - x).abs() {
            lo as u8
        } else {
            hi as u8
        }
    }

    /// Largest distance between adjacent levels, halved: the worst-case
    /// rounding error for normalized values inside the codebook range.
    pub fn half_max_gap(&self) -> f64 {
        self.levels
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
            / 2.0
    }
}

impl Default for Codebook {
    fn default() -> Self {
        Self::nf4()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantGroup {
    pub mu: f64,
    pub sigma: f64,
    pub codes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    shape: (usize, usize),
    group_size: usize,
    groups: Vec<QuantGroup>,
    codebook: Codebook,
}

impl QuantizedTensor {
    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups(&self) -> &[QuantGroup] {
        &self.groups
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn codes(&self) -> impl Iterator<Item = u8> + '_ {
        self.groups.iter().flat_map(|g| g.codes.iter().copied())
    }

    /// Writes the `SAECQ1` binary layout.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), QuantError> {
        let u32_of = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| QuantError::Malformed(format!("{what} exceeds u32")))
        };
        w.write_all(MAGIC)?;
        w.write_all(&u32_of(self.shape.0, "rows")?.to_le_bytes())?;
        w.write_all(&u32_of(self.shape.1, "cols")?.to_le_bytes())?;
        w.write_all(&u32_of(self.group_size, "group size")?.to_le_bytes())?;
        w.write_all(&[LEVELS as u8])?;
        for level in self.codebook.levels {
            w.write_all(&level.to_le_bytes())?;
        }
        let packed_len = self.group_size.div_ceil(2);
        for g in &self.groups {
            w.write_all(&g.mu.to_le_bytes())?;
            w.write_all(&g.sigma.to_le_bytes())?;
            let mut packed = vec![0u8; packed_len];
            // first code in the low nibble; a short group is padded with zero codes
            for (i, &c) in g.codes.iter().enumerate() {
                packed[i / 2] |= (c & 0x0f) << (4 * (i % 2));
            }
            w.write_all(&packed)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, QuantError> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(QuantError::Malformed("bad magic".into()));
        }
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let group_size = read_u32(&mut r)? as usize;
        let mut count = [0u8; 1];
        r.read_exact(&mut count)?;
        if count[0] as usize != LEVELS {
            return Err(QuantError::Malformed(format!(
                "expected {LEVELS} levels, found {}",
                count[0]
            )));
        }
        if rows == 0 || cols == 0 || group_size == 0 {
            return Err(QuantError::Malformed("zero dimension".into()));
        }
        let mut levels = [0.0; LEVELS];
        for l in levels.iter_mut() {
            *l = read_f64(&mut r)?;
        }
        let codebook = Codebook::new(levels)?;
        let total = rows * cols;
        let n_groups = total.div_ceil(group_size);
        let packed_len = group_size.div_ceil(2);
        let mut groups = Vec::with_capacity(n_groups);
        for gi in 0..n_groups {
            let mu = read_f64(&mut r)?;
            let sigma = read_f64(&mut r)?;
            if sigma.is_nan() || sigma < 0.0 {
                return Err(QuantError::Malformed(format!(
                    "negative sigma in group {gi}"
                )));
            }
            let mut packed = vec![0u8; packed_len];
            r.read_exact(&mut packed)?;
            let len = group_size.min(total - gi * group_size);
            let codes = (0..len)
                .map(|i| (packed[i / 2] >> (4 * (i % 2))) & 0x0f)
                .collect();
            groups.push(QuantGroup { mu, sigma, codes });
        }
        Ok(Self {
            shape: (rows, cols),
            group_size,
            groups,
            codebook,
        })
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    // A summed mean of identical values can drift by an ulp.
    if let Some(&first) = values.first() {
        if values.iter().all(|&v| v == first) {
            return (first, 0.0);
        }
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Blockwise quantization in row-major order; the last group may be short.
pub fn quantize(
    w: &Matrix,
    group_size: usize,
    codebook: &Codebook,
) -> Result<QuantizedTensor, QuantError> {
    if w.data.is_empty() {
        return Err(QuantError::EmptyInput);
    }
    if group_size == 0 {
        return Err(QuantError::InvalidGroupSize);
    }
    let groups = w
        .data
        .chunks(group_size)
        .map(|chunk| {
            let (mu, sigma) = mean_std(chunk);
            let codes = if sigma == 0.0 {
                vec![codebook.zero_index() as u8; chunk.len()]
            } else {
                chunk
                    .iter()
                    .map(|&v| codebook.nearest((v - mu) / sigma))
                    .collect()
            };
            QuantGroup { mu, sigma, codes }
        })
        .collect();
    Ok(QuantizedTensor {
        shape: w.shape(),
        group_size,
        groups,
        codebook: codebook.clone(),
    })
}

pub fn dequantize(qt: &QuantizedTensor) -> Matrix {
    let levels = qt.codebook.levels();
    let data = qt
        .groups
        .iter()
        .flat_map(|g| {
            g.codes
                .iter()
                .map(move |&c| g.sigma * levels[c as usize] + g.mu)
        })
        .collect();
    Matrix {
        rows: qt.shape.0,
        cols: qt.shape.1,
        data,
    }
}

/// Low-rank adapter `ΔW = (α / r)·A·B` with `A: d_out×r` and `B: r×d_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    a: Matrix,
    b: Matrix,
    alpha: f64,
}

impl LoraAdapter {
    pub fn new(a: Matrix, b: Matrix, alpha: f64) -> Result<Self, QuantError> {
        let r = a.cols;
        if r == 0 || b.rows != r {
            return Err(QuantError::ShapeMismatch(format!(
                "A is {}x{}, B is {}x{}",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        if r > a.rows.min(b.cols) {
            return Err(QuantError::InvalidParameter(format!(
                "rank {r} exceeds min(d_out, d_in) = {}",
                a.rows.min(b.cols)
            )));
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(QuantError::InvalidParameter(format!(
                "alpha must be finite and nonnegative, got {alpha}"
            )));
        }
        Ok(Self { a, b, alpha })
    }

    pub fn rank(&self) -> usize {
        self.a.cols
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn d_out(&self) -> usize {
        self.a.rows
    }

    pub fn d_in(&self) -> usize {
        self.b.cols
    }

    /// Trainable parameters: `r·(d_out + d_in)`.
    pub fn parameter_count(&self) -> usize {
        self.a.data.len() + self.b.data.len()
    }

    pub fn delta(&self) -> Matrix {
        let mut prod = self.a.matmul(&self.b).expect("shapes checked in new");
        let s = self.alpha / self.rank() as f64;
        prod.data.iter_mut().for_each(|v| *v *= s);
        prod
    }
}

/// `DQ(Q(W)) + (α / r)·A·B`.
pub fn effective_weight(qt: &QuantizedTensor, adapter: &LoraAdapter) -> Result<Matrix, QuantError> {
    if (adapter.d_out(), adapter.d_in()) != qt.shape {
        return Err(QuantError::ShapeMismatch(format!(
            "adapter is {}x{}, tensor is {}x{}",
            adapter.d_out(),
            adapter.d_in(),
            qt.shape.0,
            qt.shape.1
        )));
    }
    let mut w = dequantize(qt);
    let scale = adapter.alpha / adapter.rank() as f64;
    let ab = adapter.a.matmul(&adapter.b)?;
    w.scale_add(&ab, scale);
    Ok(w)
}

/// `−Σ m_t·log p_t`: the loss restricted to masked (answer) tokens.
pub fn masked_nll(log_probs: &[f64], mask: &[bool]) -> Result<f64, QuantError> {
    if log_probs.len() != mask.len() {
        return Err(QuantError::LengthMismatch(log_probs.len(), mask.len()));
    }
    if let Some(&bad) = log_probs.iter().find(|&&lp| lp.is_nan() || lp > 0.0) {
        return Err(QuantError::InvalidParameter(format!(
            "log-probabilities must be <= 0, got {bad}"
        )));
    }
    let s: f64 = log_probs
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(lp, _)| lp)
        .sum();
    Ok(if s == 0.0 { 0.0 } else { -s })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Good,
    Defect,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Good => "good",
            Label::Defect => "defect",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Good => Label::Defect,
            Label::Defect => Label::Good,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Label::Good => 0,
            Label::Defect => 1,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "good" | "0" => Ok(Label::Good),
            "defect" | "1" => Ok(Label::Defect),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Two-class probabilities `(p0, p1)` of `softmax((ℓ0, ℓ1) / T)`.
pub fn softmax2(l0: f64, l1: f64, temperature: f64) -> (f64, f64) {
    let (a, b) = (l0 / temperature, l1 / temperature);
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let z = ea + eb;
    (ea / z, eb / z)
}

/// Thresholded reader of the last-token logits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionHead {
    tau: f64,
    temperature: f64,
}

impl DecisionHead {
    pub fn new(tau: f64, temperature: f64) -> Result<Self, QuantError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(QuantError::InvalidParameter(format!(
                "tau must lie in [0, 1], got {tau}"
            )));
        }
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(QuantError::InvalidParameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self { tau, temperature })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Predicts defect iff `p1 ≥ τ`.
    pub fn decide(&self, logits: (f64, f64)) -> Result<(Label, f64), QuantError> {
        for l in [logits.0, logits.1] {
            if !l.is_finite() {
                return Err(QuantError::NonFiniteLogit(l));
            }
        }
        let (_, p1) = softmax2(logits.0, logits.1, self.temperature);
        let label = if p1 >= self.tau {
            Label::Defect
        } else {
            Label::Good
        };
        Ok((label, p1))
    }
}

impl Default for DecisionHead {
    fn default() -> Self {
        Self {
            tau: 0.5,
            temperature: 1.0,
        }
    }
}

pub fn decide(logits: (f64, f64), head: &DecisionHead) -> Result<(Label, f64), QuantError> {
    head.decide(logits)
}
