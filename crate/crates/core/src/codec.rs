//! Fountain coding over GF(2).
//!
//! Infostations emit packets whose payload is the XOR of a random subset of
//! the file's `K` blocks; the subset is carried alongside as an
//! [`EncodingVector`]. A receiver recovers the file once it holds `K`
//! linearly independent vectors. [`DecoderState`] performs the elimination
//! online, one packet at a time, keeping its rows in reduced row-echelon form
//! so the decodability test is a rank comparison and decoding is a read-out.

use std::fmt;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

/// Shape of a file split into `k` blocks of `l` bits each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileSpec {
    k: usize,
    l: usize,
}

impl FileSpec {
    pub fn new(k: usize, l: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("file must have at least one block (K >= 1)"));
        }
        if l == 0 {
            return Err(Error::invalid("blocks must carry at least one bit (L >= 1)"));
        }
        Ok(Self { k, l })
    }

    pub fn blocks(&self) -> usize {
        self.k
    }

    pub fn block_bits(&self) -> usize {
        self.l
    }

    /// Bytes needed to hold one block; unused trailing bits stay zero.
    pub fn block_bytes(&self) -> usize {
        self.l.div_ceil(8)
    }

    /// A file of uniformly random blocks.
    pub fn random_file<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<u8>> {
        let bytes = self.block_bytes();
        let tail = self.l % 8;
        (0..self.k)
            .map(|_| {
                let mut block = vec![0u8; bytes];
                rng.fill_bytes(&mut block);
                if tail != 0 {
                    block[bytes - 1] &= (1u8 << tail) - 1;
                }
                block
            })
            .collect()
    }
}

/// Coefficients `(c_1, ..., c_K)` of one coded packet, packed 64 per word.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct EncodingVector {
    len: usize,
    words: Vec<u64>,
}

impl EncodingVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(WORD_BITS)],
        }
    }

    /// The `i`-th standard basis vector (0-based).
    pub fn unit(len: usize, i: usize) -> Self {
        let mut v = Self::zeros(len);
        v.set(i, true);
        v
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i, true);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Number of set coefficients.
    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Index of the lowest set coefficient.
    pub fn first_one(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, &w)| w != 0)
            .map(|(i, w)| i * WORD_BITS + w.trailing_zeros() as usize)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * WORD_BITS + bit)
            })
        })
    }

    pub fn xor_assign(&mut self, other: &EncodingVector) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= *b;
        }
    }

    pub fn to_bits(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }
}

impl fmt::Debug for EncodingVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = (0..self.len).map(|i| if self.get(i) { '1' } else { '0' }).collect();
        write!(f, "EncodingVector({s})")
    }
}

/// One coded packet: the coefficient vector and the XOR of the selected blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub vector: EncodingVector,
    pub payload: Vec<u8>,
}

fn xor_into(dst: &mut [u8], src: &[u8]) {
    debug_assert_eq!(dst.len(), src.len());
    let mut d = dst.chunks_exact_mut(8);
    let mut s = src.chunks_exact(8);
    for (dw, sw) in (&mut d).zip(&mut s) {
        let x = u64::from_ne_bytes(dw.try_into().unwrap()) ^ u64::from_ne_bytes(sw.try_into().unwrap());
        dw.copy_from_slice(&x.to_ne_bytes());
    }
    for (a, b) in d.into_remainder().iter_mut().zip(s.remainder()) {
        *a ^= *b;
    }
}

/// Every bit independently 0 or 1 with probability 1/2. The zero vector is a
/// legal outcome.
pub fn sample_uniform_vector<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<EncodingVector> {
    if k == 0 {
        return Err(Error::invalid("encoding vector length K must be >= 1"));
    }
    let mut v = EncodingVector::zeros(k);
    for w in v.words.iter_mut() {
        *w = rng.next_u64();
    }
    let tail = k % WORD_BITS;
    if tail != 0 {
        *v.words.last_mut().unwrap() &= (1u64 << tail) - 1;
    }
    Ok(v)
}

/// Parameters of the robust soliton degree distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolitonParams {
    pub c: f64,
    pub delta: f64,
}

impl SolitonParams {
    pub fn new(c: f64, delta: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!("soliton constant c must be > 0, got {c}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("soliton delta must lie in (0,1), got {delta}")));
        }
        Ok(Self { c, delta })
    }

    /// Expected number of degree-one check nodes, `c * sqrt(K) * ln(K / delta)`.
    pub fn spike_scale(&self, k: usize) -> f64 {
        let k = k as f64;
        self.c * k.sqrt() * (k / self.delta).ln()
    }
}

/// Robust soliton distribution over degrees `1..=K`, tabulated once.
#[derive(Debug, Clone)]
pub struct RobustSoliton {
    k: usize,
    s: f64,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl RobustSoliton {
    pub fn new(k: usize, params: SolitonParams) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("soliton distribution needs K >= 1"));
        }
        let s = params.spike_scale(k);
        let kf = k as f64;
        if !(s > 0.0) || s >= kf {
            return Err(Error::invalid(format!(
                "spike scale S = {s:.4} must lie in (0, K = {k}); spike index out of range"
            )));
        }
        if s < params.delta {
            return Err(Error::invalid(format!(
                "spike scale S = {s:.4} below delta = {}; spike mass would be negative",
                params.delta
            )));
        }
        let spike = (kf / s).floor() as usize;
        let mut weights = Vec::with_capacity(k);
        for d in 1..=k {
            let df = d as f64;
            let ideal = if d == 1 { 1.0 / kf } else { 1.0 / (df * (df - 1.0)) };
            let tau = if d < spike {
                s / (kf * df)
            } else if d == spike {
                s * (s / params.delta).ln() / kf
            } else {
                0.0
            };
            weights.push(ideal + tau);
        }
        let beta: f64 = weights.iter().sum();
        let pmf: Vec<f64> = weights.into_iter().map(|w| w / beta).collect();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { k, s, pmf, cdf })
    }

    pub fn spike_scale(&self) -> f64 {
        self.s
    }

    /// Probability of degree `d` (1-based); zero outside `1..=K`.
    pub fn pmf(&self, d: usize) -> f64 {
        if d == 0 || d > self.k {
            0.0
        } else {
            self.pmf[d - 1]
        }
    }

    pub fn sample_degree<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.k - 1) + 1
    }

    pub fn sample_vector<R: Rng + ?Sized>(&self, rng: &mut R) -> EncodingVector {
        let d = self.sample_degree(rng);
        let mut v = EncodingVector::zeros(self.k);
        for i in index::sample(rng, self.k, d) {
            v.set(i, true);
        }
        v
    }
}

/// One-shot draw; build a [`RobustSoliton`] directly when sampling repeatedly.
pub fn sample_soliton_vector<R: Rng + ?Sized>(k: usize, params: SolitonParams, rng: &mut R) -> Result<EncodingVector> {
    Ok(RobustSoliton::new(k, params)?.sample_vector(rng))
}

/// How infostations draw encoding vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CodingScheme {
    Uniform,
    LtSoliton(SolitonParams),
}

/// A scheme bound to a block count, ready to draw vectors.
#[derive(Debug, Clone)]
pub enum VectorSampler {
    Uniform(usize),
    Soliton(RobustSoliton),
}

impl VectorSampler {
    pub fn new(k: usize, scheme: CodingScheme) -> Result<Self> {
        match scheme {
            CodingScheme::Uniform => {
                if k == 0 {
                    return Err(Error::invalid("encoding vector length K must be >= 1"));
                }
                Ok(Self::Uniform(k))
            }
            CodingScheme::LtSoliton(p) => Ok(Self::Soliton(RobustSoliton::new(k, p)?)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> EncodingVector {
        match self {
            Self::Uniform(k) => sample_uniform_vector(*k, rng).expect("K validated at construction"),
            Self::Soliton(dist) => dist.sample_vector(rng),
        }
    }
}

/// XOR of the blocks selected by `vector`.
pub fn encode(file: &[Vec<u8>], vector: &EncodingVector) -> Result<Packet> {
    if file.len() != vector.len() {
        return Err(Error::invalid(format!(
            "file has {} blocks but encoding vector has length {}",
            file.len(),
            vector.len()
        )));
    }
    let Some(first) = file.first() else {
        return Err(Error::invalid("file must have at least one block"));
    };
    let bytes = first.len();
    if let Some((i, b)) = file.iter().enumerate().find(|(_, b)| b.len() != bytes) {
        return Err(Error::invalid(format!(
            "block {i} has {} bytes, expected {bytes}",
            b.len()
        )));
    }
    let mut payload = vec![0u8; bytes];
    for i in vector.ones() {
        xor_into(&mut payload, &file[i]);
    }
    Ok(Packet {
        vector: vector.clone(),
        payload,
    })
}

#[derive(Debug, Clone)]
struct Row {
    pivot: usize,
    vector: EncodingVector,
    payload: Vec<u8>,
}

/// Online Gaussian elimination over GF(2).
///
/// Invariant: every stored row has a 1 at its own pivot, the pivot is its
/// lowest set coefficient, and it has 0 at every other row's pivot.
#[derive(Debug, Clone)]
pub struct DecoderState {
    k: usize,
    rows: Vec<Row>,
    row_of_pivot: Vec<Option<usize>>,
    payload_len: Option<usize>,
}

/// Result of [`DecoderState::try_decode`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeStatus {
    Decoded(Vec<Vec<u8>>),
    NotYetDecodable { rank: usize },
}

impl DecoderState {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("decoder needs K >= 1"));
        }
        Ok(Self {
            k,
            rows: Vec::with_capacity(k),
            row_of_pivot: vec![None; k],
            payload_len: None,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.k
    }

    /// Absorbs a packet. Returns whether it was innovative (raised the rank).
    pub fn receive(&mut self, packet: &Packet) -> Result<bool> {
        if packet.vector.len() != self.k {
            return Err(Error::invalid(format!(
                "packet vector length {} does not match decoder K = {}",
                packet.vector.len(),
                self.k
            )));
        }
        match self.payload_len {
            Some(n) if n != packet.payload.len() => {
                return Err(Error::invalid(format!(
                    "payload length {} differs from earlier packets ({n})",
                    packet.payload.len()
                )));
            }
            _ => {}
        }
        if self.is_complete() {
            return Ok(false);
        }

        let mut vector = packet.vector.clone();
        let mut payload = packet.payload.clone();
        // Bits at existing pivots are independent of one another in RREF, so
        // the scan order does not matter.
        for row in &self.rows {
            if vector.get(row.pivot) {
                vector.xor_assign(&row.vector);
                xor_into(&mut payload, &row.payload);
            }
        }
        let Some(pivot) = vector.first_one() else {
            return Ok(false);
        };
        for row in self.rows.iter_mut() {
            if row.vector.get(pivot) {
                row.vector.xor_assign(&vector);
                xor_into(&mut row.payload, &payload);
            }
        }
        self.payload_len.get_or_insert(payload.len());
        self.row_of_pivot[pivot] = Some(self.rows.len());
        self.rows.push(Row { pivot, vector, payload });
        Ok(true)
    }

    pub fn try_decode(&self) -> DecodeStatus {
        if !self.is_complete() {
            return DecodeStatus::NotYetDecodable { rank: self.rank() };
        }
        let blocks = self
            .row_of_pivot
            .iter()
            .map(|r| {
                self.rows[r.expect("full rank implies every column is a pivot")]
                    .payload
                    .clone()
            })
            .collect();
        DecodeStatus::Decoded(blocks)
    }

    /// Scans the stored rows for the reduced row-echelon invariant.
    pub fn is_reduced(&self) -> bool {
        let mut seen = vec![false; self.k];
        for row in &self.rows {
            if seen[row.pivot] || row.vector.first_one() != Some(row.pivot) {
                return false;
            }
            seen[row.pivot] = true;
        }
        self.rows.iter().all(|row| {
            self.rows
                .iter()
                .filter(|other| other.pivot != row.pivot)
                .all(|other| !row.vector.get(other.pivot))
        })
    }
}

/// Packets a receiver should collect to decode with failure probability at
/// most `epsilon`, rounded up to a whole packet.
pub fn packets_needed(k: usize, epsilon: f64, scheme: CodingScheme) -> Result<usize> {
    if k == 0 {
        return Err(Error::invalid("K must be >= 1"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    let n = match scheme {
        CodingScheme::Uniform => k as f64 + (1.0 / epsilon).log2().ceil(),
        CodingScheme::LtSoliton(p) => {
            let s = p.spike_scale(k);
            (k as f64 + 2.0 * s * (s / epsilon).log2()).ceil()
        }
    };
    Ok((n as usize).max(k))
}

/// Probability that `n` independent uniform vectors span GF(2)^k.
pub fn span_probability(k: usize, n: usize) -> f64 {
    if n < k {
        return 0.0;
    }
    (0..k)
        .map(|i| 1.0 - 2f64.powi(i as i32 - n.min(i32::MAX as usize) as i32))
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn bits(s: &str) -> EncodingVector {
        EncodingVector::from_bits(&s.chars().map(|c| c == '1').collect::<Vec<_>>())
    }

    #[test]
    fn uniform_vector_rejects_zero_length() {
        assert!(matches!(
            sample_uniform_vector(0, &mut rng(1)),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn uniform_vector_replays_under_seed() {
        let a = sample_uniform_vector(4, &mut rng(7)).unwrap();
        let b = sample_uniform_vector(4, &mut rng(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_vector_bit_frequency() {
        let mut r = rng(11);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| sample_uniform_vector(1, &mut r).unwrap().get(0))
            .count();
        let frac = ones as f64 / n as f64;
        assert!((0.495..=0.505).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn uniform_vector_covers_all_outcomes_equally() {
        let mut r = rng(12);
        let n = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let v = sample_uniform_vector(3, &mut r).unwrap();
            let idx = v.ones().map(|i| 1 << i).sum::<usize>();
            counts[idx] += 1;
        }
        let expected = n as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square, 7 dof, 99.9th percentile
        assert!(chi2 < 24.32, "chi2 {chi2}, counts {counts:?}");
        for c in counts {
            assert!((c as f64 / n as f64 - 0.125).abs() <= 0.01);
        }
    }

    #[test]
    fn uniform_vector_masks_tail_word() {
        let mut r = rng(3);
        for _ in 0..100 {
            let v = sample_uniform_vector(70, &mut r).unwrap();
            assert!(v.ones().all(|i| i < 70));
        }
    }

    /// Independent normalization of rho + tau, written out term by term.
    fn soliton_oracle(k: usize, c: f64, delta: f64) -> Vec<f64> {
        let s = c * (k as f64).sqrt() * (k as f64 / delta).ln();
        let spike = (k as f64 / s) as usize;
        let mut w = vec![0.0; k + 1];
        w[1] = 1.0 / k as f64;
        for (d, wd) in w.iter_mut().enumerate().skip(2) {
            *wd = 1.0 / (d * (d - 1)) as f64;
        }
        for (d, wd) in w.iter_mut().enumerate().skip(1) {
            if d + 1 <= spike {
                *wd += s / (k * d) as f64;
            }
        }
        w[spike] += s * (s / delta).ln() / k as f64;
        let total: f64 = w.iter().sum();
        w.iter().map(|x| x / total).collect()
    }

    #[test]
    fn soliton_table_matches_oracle() {
        let dist = RobustSoliton::new(10, SolitonParams::new(0.1, 0.5).unwrap()).unwrap();
        let oracle = soliton_oracle(10, 0.1, 0.5);
        for d in 1..=10 {
            assert!((dist.pmf(d) - oracle[d]).abs() < 1e-15, "d={d}");
        }
        assert_eq!(dist.pmf(0), 0.0);
        assert_eq!(dist.pmf(11), 0.0);
    }

    #[test]
    fn soliton_degree_one_frequency() {
        let params = SolitonParams::new(0.1, 0.5).unwrap();
        let mu1 = soliton_oracle(10, 0.1, 0.5)[1];
        let mut r = rng(5);
        let n = 100_000;
        let dist = RobustSoliton::new(10, params).unwrap();
        let mut ones = 0;
        for _ in 0..n {
            let v = dist.sample_vector(&mut r);
            let d = v.weight();
            assert!((1..=10).contains(&d));
            if d == 1 {
                ones += 1;
            }
        }
        let freq = ones as f64 / n as f64;
        assert!((freq - mu1).abs() <= 0.01, "freq {freq}, mu(1) {mu1}");
    }

    #[test]
    fn soliton_replays_under_seed() {
        let params = SolitonParams::new(0.1, 0.5).unwrap();
        let a = sample_soliton_vector(10, params, &mut rng(9)).unwrap();
        let b = sample_soliton_vector(10, params, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn soliton_rejects_spike_beyond_k() {
        // S = 3 * 2 * ln(8) > K
        let params = SolitonParams::new(3.0, 0.5).unwrap();
        assert!(matches!(RobustSoliton::new(4, params), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn soliton_params_validate() {
        assert!(SolitonParams::new(0.0, 0.5).is_err());
        assert!(SolitonParams::new(0.1, 1.0).is_err());
        assert!(SolitonParams::new(0.1, 0.0).is_err());
    }

    #[test]
    fn encode_unit_vector_selects_block() {
        let file = vec![vec![1, 2], vec![3, 4], vec![5, 6]];
        let p = encode(&file, &EncodingVector::unit(3, 0)).unwrap();
        assert_eq!(p.payload, vec![1, 2]);
    }

    #[test]
    fn encode_zero_vector_gives_zero_payload() {
        let file = vec![vec![0xAB; 13], vec![0xCD; 13]];
        let p = encode(&file, &EncodingVector::zeros(2)).unwrap();
        assert_eq!(p.payload, vec![0; 13]);
    }

    #[test]
    fn encode_xors_selected_blocks() {
        let file = vec![vec![0xFF], vec![0x0F]];
        let p = encode(&file, &bits("11")).unwrap();
        assert_eq!(p.payload, vec![0xF0]);
    }

    #[test]
    fn encode_word_path_matches_bytewise_xor() {
        let mut r = rng(21);
        let spec = FileSpec::new(5, 8 * 19).unwrap();
        let file = spec.random_file(&mut r);
        let v = bits("10110");
        let mut expected = vec![0u8; 19];
        for (i, block) in file.iter().enumerate() {
            if v.get(i) {
                for (e, b) in expected.iter_mut().zip(block) {
                    *e ^= b;
                }
            }
        }
        assert_eq!(encode(&file, &v).unwrap().payload, expected);
    }

    #[test]
    fn encode_rejects_shape_mismatch() {
        let file = vec![vec![1], vec![2, 3]];
        assert!(encode(&file, &bits("11")).is_err());
        assert!(encode(&file, &bits("111")).is_err());
    }

    #[test]
    fn first_packet_is_innovative() {
        let mut st = DecoderState::new(3).unwrap();
        let p = Packet {
            vector: bits("010"),
            payload: vec![7],
        };
        assert!(st.receive(&p).unwrap());
        assert_eq!(st.rank(), 1);
    }

    #[test]
    fn zero_vector_is_never_innovative() {
        let mut st = DecoderState::new(3).unwrap();
        let p = Packet {
            vector: bits("000"),
            payload: vec![0],
        };
        assert!(!st.receive(&p).unwrap());
        assert_eq!(st.rank(), 0);
    }

    #[test]
    fn duplicate_is_not_innovative() {
        let mut st = DecoderState::new(3).unwrap();
        let p = Packet {
            vector: bits("110"),
            payload: vec![1],
        };
        assert!(st.receive(&p).unwrap());
        assert!(!st.receive(&p).unwrap());
        assert_eq!(st.rank(), 1);
    }

    #[test]
    fn dependent_triple_detected() {
        let mut st = DecoderState::new(3).unwrap();
        let a = st
            .receive(&Packet {
                vector: bits("110"),
                payload: vec![],
            })
            .unwrap();
        let b = st
            .receive(&Packet {
                vector: bits("011"),
                payload: vec![],
            })
            .unwrap();
        let c = st
            .receive(&Packet {
                vector: bits("101"),
                payload: vec![],
            })
            .unwrap();
        assert_eq!((a, b, c), (true, true, false));
        assert_eq!(st.rank(), 2);
        assert!(st.is_reduced());
    }

    #[test]
    fn receive_rejects_length_mismatch() {
        let mut st = DecoderState::new(3).unwrap();
        let p = Packet {
            vector: bits("11"),
            payload: vec![],
        };
        assert!(matches!(st.receive(&p), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn receive_rejects_payload_length_change() {
        let mut st = DecoderState::new(2).unwrap();
        st.receive(&Packet {
            vector: bits("10"),
            payload: vec![1],
        })
        .unwrap();
        assert!(st
            .receive(&Packet {
                vector: bits("01"),
                payload: vec![1, 2]
            })
            .is_err());
    }

    #[test]
    fn not_yet_decodable_reports_rank() {
        let mut st = DecoderState::new(2).unwrap();
        st.receive(&Packet {
            vector: bits("11"),
            payload: vec![9],
        })
        .unwrap();
        assert_eq!(st.try_decode(), DecodeStatus::NotYetDecodable { rank: 1 });
    }

    #[test]
    fn identity_packets_decode_directly() {
        let blocks = vec![vec![1u8, 1], vec![2, 2], vec![3, 3], vec![4, 4]];
        let mut st = DecoderState::new(4).unwrap();
        for (i, b) in blocks.iter().enumerate() {
            st.receive(&Packet {
                vector: EncodingVector::unit(4, i),
                payload: b.clone(),
            })
            .unwrap();
        }
        assert_eq!(st.try_decode(), DecodeStatus::Decoded(blocks));
    }

    #[test]
    fn random_round_trip_k4() {
        let mut r = rng(33);
        let spec = FileSpec::new(4, 37).unwrap();
        let file = spec.random_file(&mut r);
        let mut st = DecoderState::new(4).unwrap();
        let mut received = Vec::new();
        while !st.is_complete() {
            let p = encode(&file, &sample_uniform_vector(4, &mut r).unwrap()).unwrap();
            st.receive(&p).unwrap();
            received.push(p);
        }
        let DecodeStatus::Decoded(decoded) = st.try_decode() else {
            panic!("full rank")
        };
        assert_eq!(decoded, file);
        for p in &received {
            assert_eq!(encode(&decoded, &p.vector).unwrap(), *p);
        }
    }

    #[test]
    fn random_file_masks_trailing_bits() {
        let spec = FileSpec::new(3, 10).unwrap();
        for b in spec.random_file(&mut rng(2)) {
            assert_eq!(b.len(), 2);
            assert_eq!(b[1] & !0b11, 0);
        }
    }

    #[test]
    fn packets_needed_uniform() {
        assert_eq!(packets_needed(100, 0.01, CodingScheme::Uniform).unwrap(), 107);
        assert_eq!(packets_needed(64, 0.01, CodingScheme::Uniform).unwrap(), 71);
        for k in [1, 5, 1000] {
            assert_eq!(packets_needed(k, 0.5, CodingScheme::Uniform).unwrap(), k + 1);
        }
    }

    #[test]
    fn packets_needed_lt() {
        // S = 0.2 * 100 * ln(20000) = 198.0698; K + 2 S log2(2 S) = 13418.63
        let scheme = CodingScheme::LtSoliton(SolitonParams::new(0.2, 0.5).unwrap());
        assert_eq!(packets_needed(10_000, 0.5, scheme).unwrap(), 13_419);
    }

    #[test]
    fn packets_needed_rejects_bad_epsilon() {
        for eps in [0.0, 1.0, -0.1, 1.5] {
            assert!(packets_needed(10, eps, CodingScheme::Uniform).is_err());
        }
    }

    /// Counts full-rank n x k matrices over GF(2) by exhaustive enumeration.
    fn span_by_enumeration(k: usize, n: usize) -> f64 {
        let total = 1u64 << (k * n);
        let mut full = 0u64;
        for m in 0..total {
            let mut basis: Vec<u32> = Vec::new();
            for row in 0..n {
                let mut v = ((m >> (row * k)) & ((1 << k) - 1)) as u32;
                for &b in &basis {
                    v = v.min(v ^ b);
                }
                if v != 0 {
                    basis.push(v);
                    basis.sort_unstable_by(|a, b| b.cmp(a));
                }
            }
            if basis.len() == k {
                full += 1;
            }
        }
        full as f64 / total as f64
    }

    #[test]
    fn span_probability_small_cases() {
        assert_eq!(span_probability(3, 2), 0.0);
        assert_eq!(span_probability(1, 1), 0.5);
        assert!((span_probability(3, 5) - 0.794677734375).abs() < 1e-15);
    }

    #[test]
    fn span_probability_matches_enumeration() {
        for (k, n) in [(1, 1), (2, 2), (2, 4), (3, 3), (3, 5), (4, 4)] {
            let exact = span_by_enumeration(k, n);
            assert!((span_probability(k, n) - exact).abs() < 1e-12, "k={k} n={n}");
        }
        assert!((span_by_enumeration(3, 5) - 0.794677734375).abs() < 1e-15);
    }

    #[test]
    fn span_probability_huge_n_is_one() {
        assert_eq!(span_probability(4, 250), 1.0);
        assert_eq!(span_probability(4, usize::MAX), 1.0);
    }
}
