//! Seeded signal generators and spectral metrics.
//!
//! Every generator is a pure function of its [`SignalSpec`]; the seed feeds a
//! ChaCha stream cipher, so a given `(spec, seed)` yields byte-identical
//! output on every platform and thread count.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution as _, Gamma, LogNormal, Normal, StandardNormal, Uniform};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{analytic_cumulants, Distribution};

/// Sample rate used by the OFDM defaults (Hz).
pub const DEFAULT_SAMPLE_RATE: f64 = 960e3;
/// Welch segment length.
pub const DEFAULT_SEGMENT: usize = 256;

/// Deterministic RNG for a seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Kind-specific generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SignalKind {
    /// Real baseband OFDM: `subcarriers` QAM symbols on bins `1..=subcarriers`
    /// of an `fft_size` Hermitian-symmetric inverse transform, with a cyclic
    /// prefix. Output is scaled to unit RMS.
    Ofdm {
        #[serde(default = "default_subcarriers")]
        subcarriers: usize,
        #[serde(default = "default_fft_size")]
        fft_size: usize,
        #[serde(default = "default_cyclic_prefix")]
        cyclic_prefix: usize,
        /// Square QAM order (4, 16, 64, ...).
        #[serde(default = "default_qam")]
        qam: usize,
    },
    /// White Gaussian noise through a Hamming-windowed sinc low-pass.
    /// `cutoff` is a fraction of the Nyquist frequency.
    FilteredNoise {
        #[serde(default = "default_cutoff")]
        cutoff: f64,
        #[serde(default = "default_taps")]
        taps: usize,
    },
    /// Unit-amplitude sinusoid plus zero-mean noise at `snr_db`.
    Hybrid {
        /// Tone frequency as a fraction of the sample rate.
        #[serde(default = "default_tone")]
        frequency: f64,
        snr_db: f64,
        #[serde(default = "default_noise")]
        noise: Distribution,
    },
    /// Independent draws from a distribution family.
    IidNoise { distribution: Distribution },
}

fn default_subcarriers() -> usize {
    64
}
fn default_fft_size() -> usize {
    256
}
fn default_cyclic_prefix() -> usize {
    16
}
fn default_qam() -> usize {
    16
}
fn default_cutoff() -> f64 {
    0.4
}
fn default_taps() -> usize {
    101
}
fn default_tone() -> f64 {
    0.05
}
fn default_noise() -> Distribution {
    Distribution::Normal { mean: 0.0, sd: 1.0 }
}
fn default_sample_rate() -> f64 {
    DEFAULT_SAMPLE_RATE
}

impl SignalKind {
    /// OFDM with 64 QAM-16 subcarriers, 256-point transform, prefix 16.
    pub fn ofdm() -> Self {
        SignalKind::Ofdm {
            subcarriers: default_subcarriers(),
            fft_size: default_fft_size(),
            cyclic_prefix: default_cyclic_prefix(),
            qam: default_qam(),
        }
    }

    /// Low-pass noise at normalized cutoff 0.4 with 101 taps.
    pub fn filtered_noise() -> Self {
        SignalKind::FilteredNoise {
            cutoff: default_cutoff(),
            taps: default_taps(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SignalKind::Ofdm { .. } => "ofdm",
            SignalKind::FilteredNoise { .. } => "filtered-noise",
            SignalKind::Hybrid { .. } => "hybrid",
            SignalKind::IidNoise { .. } => "iid-noise",
        }
    }
}

/// Full description of a generated signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    #[serde(flatten)]
    pub kind: SignalKind,
    pub length: usize,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SignalSpec {
    pub fn new(kind: SignalKind, length: usize, seed: u64) -> Self {
        Self {
            kind,
            length,
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.length == 0 {
            return bad("length must be > 0".into());
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return bad(format!("sample_rate must be > 0, got {}", self.sample_rate));
        }
        match &self.kind {
            SignalKind::Ofdm {
                subcarriers,
                fft_size,
                cyclic_prefix,
                qam,
            } => {
                if *fft_size < 4 || *subcarriers == 0 || 2 * subcarriers >= *fft_size {
                    return bad(format!(
                        "need 0 < subcarriers < fft_size/2, got {subcarriers} of {fft_size}"
                    ));
                }
                if *cyclic_prefix >= *fft_size {
                    return bad("cyclic prefix must be shorter than the symbol".into());
                }
                let side = (*qam as f64).sqrt().round() as usize;
                if *qam < 4 || side * side != *qam {
                    return bad(format!("QAM order must be a square >= 4, got {qam}"));
                }
            }
            SignalKind::FilteredNoise { cutoff, taps } => {
                if !(*cutoff > 0.0 && *cutoff < 1.0) {
                    return bad(format!("cutoff must lie in (0, 1), got {cutoff}"));
                }
                if *taps == 0 || taps % 2 == 0 {
                    return bad(format!("taps must be odd, got {taps}"));
                }
            }
            SignalKind::Hybrid {
                frequency,
                snr_db,
                noise,
            } => {
                if !(*frequency > 0.0 && *frequency < 0.5) {
                    return bad(format!("tone frequency must lie in (0, 0.5), got {frequency}"));
                }
                if !snr_db.is_finite() {
                    return bad("snr_db must be finite".into());
                }
                noise.validate().map_err(|e| Error::InvalidSpec(e.to_string()))?;
            }
            SignalKind::IidNoise { distribution } => {
                distribution
                    .validate()
                    .map_err(|e| Error::InvalidSpec(e.to_string()))?;
            }
        }
        Ok(())
    }
}

/// Generates the signal described by `spec`.
pub fn generate(spec: &SignalSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let n = spec.length;
    match &spec.kind {
        SignalKind::Ofdm {
            subcarriers,
            fft_size,
            cyclic_prefix,
            qam,
        } => Ok(ofdm(&mut rng, n, *subcarriers, *fft_size, *cyclic_prefix, *qam)),
        SignalKind::FilteredNoise { cutoff, taps } => {
            let filter = lowpass_fir(*cutoff, *taps);
            let white: Vec<f64> = (0..n + taps - 1)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            Ok(convolve_valid(&white, &filter))
        }
        SignalKind::Hybrid {
            frequency,
            snr_db,
            noise,
        } => {
            let c = analytic_cumulants(noise).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            let target_var = 0.5 / 10f64.powf(snr_db / 10.0);
            let scale = (target_var / c.c2()).sqrt();
            let mean = noise.mean();
            let phase = rng.random::<f64>() * 2.0 * PI;
            let draws = sample_distribution(noise, n, &mut rng)?;
            Ok(draws
                .iter()
                .enumerate()
                .map(|(k, d)| (2.0 * PI * frequency * k as f64 + phase).sin() + scale * (d - mean))
                .collect())
        }
        SignalKind::IidNoise { distribution } => sample_distribution(distribution, n, &mut rng),
    }
}

/// `n` independent draws from `dist`.
pub fn sample_distribution<R: Rng + ?Sized>(dist: &Distribution, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    dist.validate()?;
    let err = |e: &dyn std::fmt::Display| Error::UnsupportedDistribution(e.to_string());
    let out = match *dist {
        Distribution::Normal { mean, sd } => {
            let d = Normal::new(mean, sd).map_err(|e| err(&e))?;
            (0..n).map(|_| d.sample(rng)).collect()
        }
        Distribution::ChiSquare { k } => {
            let d = ChiSquared::new(k).map_err(|e| err(&e))?;
            (0..n).map(|_| d.sample(rng)).collect()
        }
        Distribution::Gamma { shape, scale } => {
            let d = Gamma::new(shape, scale).map_err(|e| err(&e))?;
            (0..n).map(|_| d.sample(rng)).collect()
        }
        Distribution::LogNormal { mu, sigma } => {
            let d = LogNormal::new(mu, sigma).map_err(|e| err(&e))?;
            (0..n).map(|_| d.sample(rng)).collect()
        }
        Distribution::Uniform { a, b } => {
            let d = Uniform::new(a, b).map_err(|e| err(&e))?;
            (0..n).map(|_| d.sample(rng)).collect()
        }
        Distribution::ExponentialPower { beta } => {
            // |X|^beta ~ Gamma(1/beta, 1) with a symmetric sign
            let g = Gamma::new(1.0 / beta, 1.0).map_err(|e| err(&e))?;
            (0..n)
                .map(|_| {
                    let m = g.sample(rng).powf(1.0 / beta);
                    if rng.random::<bool>() {
                        m
                    } else {
                        -m
                    }
                })
                .collect()
        }
    };
    Ok(out)
}

fn qam_symbol<R: Rng + ?Sized>(rng: &mut R, side: usize, norm: f64) -> Complex<f64> {
    let level = |k: usize| (2.0 * k as f64 - (side as f64 - 1.0)) / norm;
    Complex::new(level(rng.random_range(0..side)), level(rng.random_range(0..side)))
}

fn ofdm<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    subcarriers: usize,
    fft_size: usize,
    cyclic_prefix: usize,
    qam: usize,
) -> Vec<f64> {
    let side = (qam as f64).sqrt().round() as usize;
    // mean power of a square QAM with levels +-1, +-3, ... is 2 (M - 1) / 3
    let norm = (2.0 * (qam as f64 - 1.0) / 3.0).sqrt();
    let ifft = FftPlanner::new().plan_fft_inverse(fft_size);
    let mut out = Vec::with_capacity(n + fft_size + cyclic_prefix);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    while out.len() < n {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for k in 1..=subcarriers {
            let s = qam_symbol(rng, side, norm);
            buf[k] = s;
            buf[fft_size - k] = s.conj();
        }
        ifft.process(&mut buf);
        let symbol: Vec<f64> = buf.iter().map(|c| c.re).collect();
        out.extend_from_slice(&symbol[fft_size - cyclic_prefix..]);
        out.extend_from_slice(&symbol);
    }
    out.truncate(n);
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Linear-phase low-pass FIR (Hamming-windowed sinc) with unit DC gain.
/// `cutoff` is a fraction of Nyquist.
pub fn lowpass_fir(cutoff: f64, taps: usize) -> Vec<f64> {
    let mid = (taps as f64 - 1.0) / 2.0;
    let mut h: Vec<f64> = (0..taps)
        .map(|k| {
            let t = k as f64 - mid;
            let sinc = if t == 0.0 {
                cutoff
            } else {
                (PI * cutoff * t).sin() / (PI * t)
            };
            let w = if taps > 1 {
                0.54 - 0.46 * (2.0 * PI * k as f64 / (taps as f64 - 1.0)).cos()
            } else {
                1.0
            };
            sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Convolution keeping only fully overlapped outputs (`len(x) - len(h) + 1`).
pub fn convolve_valid(x: &[f64], h: &[f64]) -> Vec<f64> {
    if h.is_empty() || x.len() < h.len() {
        return Vec::new();
    }
    (h.len() - 1..x.len())
        .map(|n| h.iter().enumerate().map(|(k, hk)| hk * x[n - k]).sum())
        .collect()
}

/// How the effective width is read off the PSD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "definition", rename_all = "kebab-case")]
pub enum WidthDefinition {
    /// Occupied bandwidth: the band between the `(1-f)/2` and `(1+f)/2`
    /// cumulative-power points.
    Occupied { fraction: f64 },
    /// Twice the RMS deviation of frequency about the spectral centroid.
    Rms,
}

impl Default for WidthDefinition {
    fn default() -> Self {
        WidthDefinition::Occupied { fraction: 0.99 }
    }
}

/// Options for [`spectral_metrics_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub segment: usize,
    pub width: WidthDefinition,
    /// Payload rate in bit/s for the efficiency ratio; `None` uses the sample rate.
    pub payload_rate: Option<f64>,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            segment: DEFAULT_SEGMENT,
            width: WidthDefinition::default(),
            payload_rate: None,
        }
    }
}

/// Spectral summary of a real signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMetrics {
    /// Hz.
    pub effective_width: f64,
    pub spectral_efficiency: f64,
    /// One-sided power spectral density (power/Hz), bins `0..=segment/2`.
    pub psd: Vec<f64>,
    /// Bin spacing in Hz.
    pub resolution: f64,
    pub definition: WidthDefinition,
}

impl SpectralMetrics {
    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.psd.len()).map(|k| k as f64 * self.resolution).collect()
    }

    /// Integrated power `sum psd * df`.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.resolution
    }
}

/// Welch averaged periodogram: Hann window, 50% overlap, one-sided density
/// scaled so that the integrated PSD equals the mean square.
pub fn welch_psd(signal: &[f64], sample_rate: f64, segment: usize) -> Result<Vec<f64>> {
    if segment < 2 || signal.len() < segment {
        return Err(Error::SignalTooShort {
            needed: segment.max(2),
            got: signal.len(),
        });
    }
    let window: Vec<f64> = (0..segment)
        .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / segment as f64).cos())
        .collect();
    let w2: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment);
    let step = segment / 2;
    let bins = segment / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut count = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); segment];
    let mut start = 0;
    while start + segment <= signal.len() {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(signal[start + k] * window[k], 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += step;
    }
    let scale = 1.0 / (sample_rate * w2 * count as f64);
    for (k, a) in acc.iter_mut().enumerate() {
        let one_sided = if k == 0 || (segment % 2 == 0 && k == segment / 2) {
            1.0
        } else {
            2.0
        };
        *a *= scale * one_sided;
    }
    Ok(acc)
}

/// [`spectral_metrics_with`] using the default options (99% occupied bandwidth).
pub fn spectral_metrics(signal: &[f64], sample_rate: f64) -> Result<SpectralMetrics> {
    spectral_metrics_with(signal, sample_rate, &MetricOptions::default())
}

pub fn spectral_metrics_with(signal: &[f64], sample_rate: f64, options: &MetricOptions) -> Result<SpectralMetrics> {
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::InvalidArgument(format!("sample_rate must be > 0, got {sample_rate}")));
    }
    let psd = welch_psd(signal, sample_rate, options.segment)?;
    let df = sample_rate / options.segment as f64;
    let nyquist = sample_rate / 2.0;
    let total: f64 = psd.iter().sum();
    let effective_width = if total <= 0.0 {
        df
    } else {
        match options.width {
            WidthDefinition::Occupied { fraction } => {
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "power fraction must lie in (0, 1), got {fraction}"
                    )));
                }
                let lo_target = 0.5 * (1.0 - fraction) * total;
                let hi_target = 0.5 * (1.0 + fraction) * total;
                let mut cum = 0.0;
                let (mut lo, mut hi) = (None, psd.len() - 1);
                for (k, p) in psd.iter().enumerate() {
                    cum += p;
                    if lo.is_none() && cum >= lo_target {
                        lo = Some(k);
                    }
                    if cum >= hi_target {
                        hi = k;
                        break;
                    }
                }
                let lo = lo.unwrap_or(0);
                ((hi - lo + 1) as f64 * df).min(nyquist)
            }
            WidthDefinition::Rms => {
                let centroid: f64 = psd.iter().enumerate().map(|(k, p)| k as f64 * df * p).sum::<f64>() / total;
                let var: f64 = psd
                    .iter()
                    .enumerate()
                    .map(|(k, p)| (k as f64 * df - centroid).powi(2) * p)
                    .sum::<f64>()
                    / total;
                (2.0 * var.sqrt()).clamp(df.min(nyquist), nyquist)
            }
        }
    };
    let payload = options.payload_rate.unwrap_or(sample_rate);
    Ok(SpectralMetrics {
        effective_width,
        spectral_efficiency: payload / effective_width,
        psd,
        resolution: df,
        definition: options.width,
    })
}

/// Writes `index,value` rows with a header.
pub fn write_csv<W: Write>(writer: W, signal: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["index", "value"]).map_err(io)?;
    for (i, v) in signal.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:e}")]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the format produced by [`write_csv`].
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            rows: row,
            message: e.to_string(),
        })?;
        let v = rec
            .get(1)
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::Parse {
                rows: row,
                message: format!("bad value in row {row}"),
            })?;
        out.push(v);
    }
    Ok(out)
}

/// Raw little-endian `f64` samples, no header.
pub fn write_f64le<W: Write>(mut writer: W, signal: &[f64]) -> Result<()> {
    for v in signal {
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_f64le<R: Read>(mut reader: R) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse {
            rows: bytes.len() / 8,
            message: format!("{} bytes is not a whole number of f64 samples", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
