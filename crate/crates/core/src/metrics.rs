//! Reconstruction and disentanglement metrics, plus latent traversals.

use std::path::Path;

use image::{GrayImage, Luma};
use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize, Serializer};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dataset_io::{fmt_f64, write_csv, write_json};
use crate::error::{ensure, Error, Result};
use crate::phantom::{compute_attributes, segment_by_levels, IntensityLevels, RegionAreas};
use crate::vae::Vae;

/// `10 log10(range² / MSE)`; identical inputs give `+inf`.
pub fn psnr(x: ArrayView2<f64>, y: ArrayView2<f64>, data_range: f64) -> Result<f64> {
    ensure!(x.dim() == y.dim(), Contract, "psnr shapes differ: {:?} vs {:?}", x.dim(), y.dim());
    ensure!(!x.is_empty(), Contract, "psnr on empty images");
    let mse = x.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

// Separable "valid" filtering: output is (H - k + 1) × (W - k + 1).
fn filter_valid(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = Array2::<f64>::zeros((h, wo));
    for i in 0..h {
        for j in 0..wo {
            rows[[i, j]] = (0..k).map(|t| taps[t] * img[[i, j + t]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((ho, wo));
    for i in 0..ho {
        for j in 0..wo {
            out[[i, j]] = (0..k).map(|t| taps[t] * rows[[i + t, j]]).sum();
        }
    }
    out
}

/// Mean local SSIM over all window positions fully inside the image.
pub fn ssim(x: ArrayView2<f64>, y: ArrayView2<f64>, p: &SsimParams) -> Result<f64> {
    ensure!(x.dim() == y.dim(), Contract, "ssim shapes differ: {:?} vs {:?}", x.dim(), y.dim());
    let (h, w) = x.dim();
    ensure!(
        h >= p.window && w >= p.window,
        Contract,
        "image {h}×{w} is smaller than the {} px window",
        p.window
    );
    let taps = gaussian_window(p.window, p.sigma);
    let (x, y) = (x.to_owned(), y.to_owned());
    let mx = filter_valid(&x, &taps);
    let my = filter_valid(&y, &taps);
    let sxx = filter_valid(&(&x * &x), &taps);
    let syy = filter_valid(&(&y * &y), &taps);
    let sxy = filter_valid(&(&x * &y), &taps);
    let c1 = (p.k1 * p.data_range).powi(2);
    let c2 = (p.k2 * p.data_range).powi(2);
    let mut total = 0.0;
    for (((&mx, &my), (&sxx, &syy)), &sxy) in mx.iter().zip(&my).zip(sxx.iter().zip(&syy)).zip(&sxy) {
        let vx = sxx - mx * mx;
        let vy = syy - my * my;
        let cxy = sxy - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Mean per-image PSNR and SSIM over an N×1×H×W batch pair.
pub fn batch_recon_metrics(x: &Array4<f32>, y: &Array4<f32>) -> Result<(f64, f64)> {
    ensure!(x.dim() == y.dim(), Contract, "batch shapes differ: {:?} vs {:?}", x.dim(), y.dim());
    let n = x.dim().0;
    ensure!(n > 0, Data, "empty evaluation batch");
    let p = SsimParams::default();
    let (mut ps, mut ss) = (0.0, 0.0);
    for i in 0..n {
        let a = x.index_axis(Axis(0), i).index_axis(Axis(0), 0).mapv(f64::from);
        let b = y.index_axis(Axis(0), i).index_axis(Axis(0), 0).mapv(f64::from);
        ps += psnr(a.view(), b.view(), 1.0)?;
        ss += ssim(a.view(), b.view(), &p)?;
    }
    Ok((ps / n as f64, ss / n as f64))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either column is constant.
pub fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let ra = Array1::from(average_ranks(&a.to_vec()));
    let rb = Array1::from(average_ranks(&b.to_vec()));
    pearson(ra.view(), rb.view())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub mean: f64,
    pub per_attribute: Vec<f64>,
}

impl Scored {
    fn from_parts(per_attribute: Vec<f64>) -> Self {
        let mean = per_attribute.iter().sum::<f64>() / per_attribute.len().max(1) as f64;
        Scored { mean, per_attribute }
    }
}

fn check_pair(latents: ArrayView2<f64>, attrs: ArrayView2<f64>, min_n: usize) -> Result<()> {
    ensure!(
        latents.nrows() == attrs.nrows(),
        Contract,
        "{} latent rows but {} attribute rows",
        latents.nrows(),
        attrs.nrows()
    );
    ensure!(latents.nrows() >= min_n, Contract, "need at least {min_n} samples, got {}", latents.nrows());
    ensure!(attrs.ncols() >= 1, Contract, "no attributes");
    Ok(())
}

/// |Spearman(z^k, a)| for each attribute and its assigned dimension.
pub fn scc(latents: ArrayView2<f64>, attrs: ArrayView2<f64>, assignment: &[usize]) -> Result<Scored> {
    check_pair(latents, attrs, 3)?;
    ensure!(
        assignment.len() == attrs.ncols(),
        Contract,
        "{} assigned dims for {} attributes",
        assignment.len(),
        attrs.ncols()
    );
    let mut per = Vec::with_capacity(assignment.len());
    for (a, &k) in assignment.iter().enumerate() {
        ensure!(k < latents.ncols(), Contract, "assigned dimension {k} out of range");
        per.push(match spearman(latents.column(k), attrs.column(a)) {
            Some(r) => r.abs(),
            None => {
                log::warn!("constant column in scc for attribute {a}; reporting 0");
                0.0
            }
        });
    }
    Ok(Scored::from_parts(per))
}

/// R² of univariate linear regressions, D × A.
pub fn r2_matrix(latents: ArrayView2<f64>, attrs: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((latents.ncols(), attrs.ncols()), |(k, a)| {
        pearson(latents.column(k), attrs.column(a)).map_or(0.0, |r| (r * r).clamp(0.0, 1.0))
    })
}

/// Per attribute, the best single-dimension R².
pub fn interpretability(latents: ArrayView2<f64>, attrs: ArrayView2<f64>) -> Result<Scored> {
    check_pair(latents, attrs, 10)?;
    let r2 = r2_matrix(latents, attrs);
    Ok(Scored::from_parts(
        r2.axis_iter(Axis(1)).map(|c| c.fold(0.0f64, |m, &v| m.max(v))).collect(),
    ))
}

/// Per attribute, the gap between the best and second-best dimension's R².
pub fn sap(latents: ArrayView2<f64>, attrs: ArrayView2<f64>) -> Result<Scored> {
    check_pair(latents, attrs, 10)?;
    ensure!(latents.ncols() >= 2, Contract, "SAP needs at least 2 latent dimensions");
    let r2 = r2_matrix(latents, attrs);
    Ok(Scored::from_parts(
        r2.axis_iter(Axis(1))
            .map(|c| {
                let mut v = c.to_vec();
                v.sort_by(|a, b| b.total_cmp(a));
                v[0] - v[1]
            })
            .collect(),
    ))
}

/// Equal-frequency bin index per sample; equal values share a bin.
pub fn equal_frequency_bins(v: ArrayView1<f64>, n_bins: usize) -> Vec<usize> {
    let n = v.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut bins = vec![0; n];
    let mut i = 0;
    while i < n {
        let bin = (i * n_bins / n).min(n_bins - 1);
        let mut j = i;
        while j < n && v[idx[j]] == v[idx[i]] {
            bins[idx[j]] = bin;
            j += 1;
        }
        i = j;
    }
    bins
}

/// Plug-in mutual information (nats) between two binned variables, and the
/// number of occupied bins on each side.
fn binned_mi(a: &[usize], b: &[usize], n_bins: usize) -> (f64, usize, usize) {
    let n = a.len() as f64;
    let mut joint = vec![0usize; n_bins * n_bins];
    let mut pa = vec![0usize; n_bins];
    let mut pb = vec![0usize; n_bins];
    for (&i, &j) in a.iter().zip(b) {
        joint[i * n_bins + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let mut mi = 0.0;
    for i in 0..n_bins {
        for j in 0..n_bins {
            let c = joint[i * n_bins + j];
            if c > 0 {
                let pxy = c as f64 / n;
                mi += pxy * (pxy / ((pa[i] as f64 / n) * (pb[j] as f64 / n))).ln();
            }
        }
    }
    let occupied = |p: &[usize]| p.iter().filter(|&&c| c > 0).count();
    (mi.max(0.0), occupied(&pa), occupied(&pb))
}

/// Significance level of the G-test used to zero out chance-level MI entries.
pub const MI_SIGNIFICANCE: f64 = 1e-3;

/// D × A mutual information matrix. Entries whose G statistic (2·N·MI) is not
/// significant at [`MI_SIGNIFICANCE`] against independence are set to zero,
/// which removes the finite-sample bias of the plug-in estimator.
pub fn mutual_information_matrix(latents: ArrayView2<f64>, attrs: ArrayView2<f64>, n_bins: usize) -> Result<Array2<f64>> {
    check_pair(latents, attrs, 2)?;
    ensure!(n_bins >= 2, Config, "n_bins must be at least 2");
    let n = latents.nrows() as f64;
    let zb: Vec<Vec<usize>> = latents.axis_iter(Axis(1)).map(|c| equal_frequency_bins(c, n_bins)).collect();
    let ab: Vec<Vec<usize>> = attrs.axis_iter(Axis(1)).map(|c| equal_frequency_bins(c, n_bins)).collect();
    let mut out = Array2::zeros((zb.len(), ab.len()));
    for (k, z) in zb.iter().enumerate() {
        for (a, t) in ab.iter().enumerate() {
            let (mi, bz, ba) = binned_mi(z, t, n_bins);
            if bz < 2 || ba < 2 {
                continue;
            }
            let df = ((bz - 1) * (ba - 1)) as f64;
            let critical = ChiSquared::new(df)
                .map_err(|e| Error::Numerical(e.to_string()))?
                .inverse_cdf(1.0 - MI_SIGNIFICANCE);
            if 2.0 * n * mi > critical {
                out[[k, a]] = mi;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModularityScore {
    pub mean: f64,
    /// Per-dimension score, `None` for dimensions carrying no information.
    pub per_dimension: Vec<Option<f64>>,
    pub mi: Vec<Vec<f64>>,
}

/// Mean over informative dimensions of
/// `1 - Σ_{a≠a*} m_{k,a}² / (θ_k² (A - 1))`, with `θ_k = max_a m_{k,a}`.
pub fn modularity(latents: ArrayView2<f64>, attrs: ArrayView2<f64>, n_bins: usize) -> Result<ModularityScore> {
    check_pair(latents, attrs, 10)?;
    let mi = mutual_information_matrix(latents, attrs, n_bins)?;
    Ok(modularity_from_mi(&mi))
}

pub fn modularity_from_mi(mi: &Array2<f64>) -> ModularityScore {
    let a = mi.ncols();
    let mut per = Vec::with_capacity(mi.nrows());
    for (k, row) in mi.rows().into_iter().enumerate() {
        let (star, theta) = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        if theta <= 0.0 {
            log::debug!("dimension {k} carries no attribute information; skipped");
            per.push(None);
            continue;
        }
        if a == 1 {
            per.push(Some(1.0));
            continue;
        }
        let off: f64 = row.iter().enumerate().filter(|&(i, _)| i != star).map(|(_, &m)| m * m).sum();
        per.push(Some((1.0 - off / (theta * theta * (a - 1) as f64)).clamp(0.0, 1.0)));
    }
    let scored: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    ModularityScore {
        mean,
        per_dimension: per,
        mi: mi.rows().into_iter().map(|r| r.to_vec()).collect(),
    }
}

fn ser_metric<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&fmt_f64(*v))
    }
}

fn de_metric<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!("invalid metric value `{other}`"))),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub n: usize,
    #[serde(serialize_with = "ser_metric", deserialize_with = "de_metric")]
    pub psnr: f64,
    pub ssim: f64,
    /// Always "unavailable": the perceptual metric needs a pretrained network.
    pub lpips: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementMetrics {
    pub n: usize,
    pub attributes: Vec<String>,
    pub regularized_dims: Vec<usize>,
    pub interpretability: Scored,
    pub scc: Scored,
    pub sap: Scored,
    pub modularity: ModularityScore,
    /// D × A regression scores.
    pub r2: Vec<Vec<f64>>,
}

/// All disentanglement metrics on posterior means.
pub fn disentanglement(
    latents: ArrayView2<f64>,
    attrs: ArrayView2<f64>,
    attribute_names: &[String],
    assignment: &[usize],
    n_bins: usize,
) -> Result<DisentanglementMetrics> {
    Ok(DisentanglementMetrics {
        n: latents.nrows(),
        attributes: attribute_names.to_vec(),
        regularized_dims: assignment.to_vec(),
        interpretability: interpretability(latents, attrs)?,
        scc: scc(latents, attrs, assignment)?,
        sap: sap(latents, attrs)?,
        modularity: modularity(latents, attrs, n_bins)?,
        r2: r2_matrix(latents, attrs).rows().into_iter().map(|r| r.to_vec()).collect(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<ReconMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disentanglement: Option<DisentanglementMetrics>,
}

impl MetricsReport {
    /// Flat (metric, value) rows.
    pub fn scalars(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if let Some(r) = &self.reconstruction {
            out.push(("psnr".into(), fmt_f64(r.psnr)));
            out.push(("ssim".into(), fmt_f64(r.ssim)));
            out.push(("lpips".into(), r.lpips.clone()));
        }
        if let Some(d) = &self.disentanglement {
            out.push(("interpretability".into(), fmt_f64(d.interpretability.mean)));
            out.push(("scc".into(), fmt_f64(d.scc.mean)));
            out.push(("sap".into(), fmt_f64(d.sap.mean)));
            out.push(("modularity".into(), fmt_f64(d.modularity.mean)));
            for (i, name) in d.attributes.iter().enumerate() {
                out.push((format!("interpretability.{name}"), fmt_f64(d.interpretability.per_attribute[i])));
                out.push((format!("scc.{name}"), fmt_f64(d.scc.per_attribute[i])));
                out.push((format!("sap.{name}"), fmt_f64(d.sap.per_attribute[i])));
            }
        }
        out
    }

    /// Writes `metrics.json` and `metrics.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("metrics.json"), self)?;
        let rows: Vec<Vec<String>> = self.scalars().into_iter().map(|(k, v)| vec![k, v]).collect();
        write_csv(&dir.join("metrics.csv"), &["metric".into(), "value".into()], &rows)
    }
}

/// Reconstructs `x` through `decode(mu)` and scores it.
pub fn reconstruction(model: &Vae<f32>, x: &Array4<f32>) -> Result<ReconMetrics> {
    let mut x_hat = Array4::zeros(x.raw_dim());
    let n = x.dim().0;
    let mut start = 0;
    while start < n {
        let end = (start + 128).min(n);
        let part = x.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        let mu = model.encode(&part)?.mu;
        x_hat.slice_mut(ndarray::s![start..end, .., .., ..]).assign(&model.decode(&mu)?);
        start = end;
    }
    let (psnr, ssim) = batch_recon_metrics(x, &x_hat)?;
    Ok(ReconMetrics {
        n,
        psnr,
        ssim,
        lpips: "unavailable".into(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Traversal {
    pub dim: usize,
    pub values: Vec<f64>,
    pub images: Vec<Array2<f32>>,
    /// Region areas re-measured on each decoded frame.
    pub readout: Vec<RegionAreas>,
}

/// Decodes `z0` with dimension `dim` swept over `[z0 - span, z0 + span]`.
pub fn latent_traversal(
    model: &Vae<f32>,
    dim: usize,
    z0: ArrayView1<f64>,
    span: f64,
    steps: usize,
    levels: &IntensityLevels,
) -> Result<Traversal> {
    let d = model.latent_dim();
    ensure!(dim < d, Contract, "traversal dimension {dim} out of range for latent size {d}");
    ensure!(steps >= 2, Contract, "traversal needs at least 2 steps");
    ensure!(z0.len() == d, Contract, "center has {} entries, latent size is {d}", z0.len());
    ensure!(span.is_finite() && span >= 0.0, Contract, "span must be finite and non-negative");
    let values: Vec<f64> = (0..steps)
        .map(|i| z0[dim] - span + 2.0 * span * i as f64 / (steps - 1) as f64)
        .collect();
    let mut z = Array2::<f32>::zeros((steps, d));
    for (i, &v) in values.iter().enumerate() {
        for j in 0..d {
            z[[i, j]] = z0[j] as f32;
        }
        z[[i, dim]] = v as f32;
    }
    let decoded = model.decode(&z)?;
    let mut images = Vec::with_capacity(steps);
    let mut readout = Vec::with_capacity(steps);
    for frame in decoded.outer_iter() {
        let img = frame.index_axis(Axis(0), 0).to_owned();
        readout.push(compute_attributes(segment_by_levels(img.view(), levels).view())?);
        images.push(img);
    }
    Ok(Traversal {
        dim,
        values,
        images,
        readout,
    })
}

impl Traversal {
    /// Frames side by side as an 8-bit grayscale strip.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let (h, w) = self.images.first().map(|i| i.dim()).unwrap_or((0, 0));
        let mut img = GrayImage::new((w * self.images.len()) as u32, h as u32);
        for (f, frame) in self.images.iter().enumerate() {
            for ((r, c), &v) in frame.indexed_iter() {
                let px = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel((f * w + c) as u32, r as u32, Luma([px]));
            }
        }
        img.save(path).map_err(|e| Error::Persistence(format!("{}: {e}", path.display())))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = ["step", "value", "lv_area", "myo_area", "rv_area"].map(String::from).to_vec();
        let rows: Vec<Vec<String>> = self
            .values
            .iter()
            .zip(&self.readout)
            .enumerate()
            .map(|(i, (v, a))| {
                vec![
                    i.to_string(),
                    fmt_f64(*v),
                    a.lv_area.to_string(),
                    a.myo_area.to_string(),
                    a.rv_area.to_string(),
                ]
            })
            .collect();
        write_csv(path, &header, &rows)
    }
}
