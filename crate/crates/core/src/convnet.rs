//! Temporal convolution, spatial max pooling and the two-block pipeline.
//!
//! A block convolves every input matrix along time with every filter of its
//! bank, max-pools groups of `delta` neighbouring rows and applies `tanh`.
//! Responses of different filters are never summed: a block with `k` filters
//! turns one input matrix into `k` output matrices. The column count (time)
//! is preserved throughout so labelled columns can be read off the output.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    decode_filter_bank_from, encode_filter_bank, train, AEHyper, FilterBank, DEFAULT_WINDOWS,
};
use crate::dataset::{
    header_value, read_header, sample_windows, test_exclusion_columns, VTDataset,
};
use crate::rng::derive_seed;
use crate::{Error, ParseError, Result};

/// Forward-window correlation: `out[v, t] = sum_s filter[s] * in[v, t + s]`,
/// with samples past the last column read as zero.
pub fn temporal_convolve(matrix: ArrayView2<'_, f64>, filter: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
    let n = matrix.ncols();
    let tau = filter.len();
    if tau == 0 || tau > n {
        return Err(Error::contract(format!(
            "filter length {tau} must be in 1..={n}"
        )));
    }
    let mut out = Array2::zeros(matrix.raw_dim());
    for (mut out_row, in_row) in out.rows_mut().into_iter().zip(matrix.rows()) {
        let input = in_row.as_slice();
        match input {
            Some(input) => correlate_row(input, filter, out_row.as_slice_mut().expect("owned row")),
            None => {
                let owned = in_row.to_vec();
                correlate_row(&owned, filter, out_row.as_slice_mut().expect("owned row"));
            }
        }
    }
    Ok(out)
}

fn correlate_row(input: &[f64], filter: ArrayView1<'_, f64>, out: &mut [f64]) {
    let n = input.len();
    for (t, o) in out.iter_mut().enumerate() {
        let end = (t + filter.len()).min(n);
        *o = input[t..end]
            .iter()
            .zip(filter.iter())
            .map(|(x, w)| x * w)
            .sum();
    }
}

/// Max over consecutive groups of `delta` rows taken in `order`.
pub fn spatial_max_pool(matrix: ArrayView2<'_, f64>, delta: usize, order: &[usize]) -> Result<Array2<f64>> {
    let (rows, n) = matrix.dim();
    if delta == 0 || rows % delta != 0 {
        return Err(Error::contract(format!(
            "pooling range {delta} does not divide {rows} rows"
        )));
    }
    if order.len() != rows {
        return Err(Error::contract(format!(
            "order has {} entries for {rows} rows",
            order.len()
        )));
    }
    let mut out = Array2::from_elem((rows / delta, n), f64::NEG_INFINITY);
    for (g, group) in order.chunks(delta).enumerate() {
        let mut target = out.row_mut(g);
        for &r in group {
            let src = matrix.row(r);
            target.zip_mut_with(&src, |o, &v| *o = o.max(v));
        }
    }
    Ok(out)
}

/// Equally shaped response matrices with their filter-index paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseStack {
    pub matrices: Vec<Array2<f64>>,
    pub provenance: Vec<Vec<usize>>,
}

impl ResponseStack {
    /// A stack holding one input matrix with an empty provenance path.
    pub fn single(matrix: Array2<f64>) -> Self {
        Self {
            matrices: vec![matrix],
            provenance: vec![Vec::new()],
        }
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.matrices.first().map(|m| m.dim())
    }

    /// Stack all matrices along the row axis, in provenance order.
    pub fn concatenate_rows(&self) -> Array2<f64> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.provenance[a].cmp(&self.provenance[b]));
        let views: Vec<_> = idx.iter().map(|&i| self.matrices[i].view()).collect();
        concatenate(Axis(0), &views).expect("matrices share a shape")
    }
}

/// One convolution, pooling and `tanh` block.
///
/// `banks` holds either a single bank shared by every input or one bank per
/// input matrix.
pub fn apply_block(
    stack: &ResponseStack,
    banks: &[FilterBank],
    delta: usize,
    order: &[usize],
) -> Result<ResponseStack> {
    if banks.len() != 1 && banks.len() != stack.len() {
        return Err(Error::contract(format!(
            "{} filter banks for {} input matrices",
            banks.len(),
            stack.len()
        )));
    }
    let jobs: Vec<(usize, usize)> = (0..stack.len())
        .flat_map(|i| {
            let bank = if banks.len() == 1 { &banks[0] } else { &banks[i] };
            (0..bank.k()).map(move |j| (i, j))
        })
        .collect();
    let matrices = jobs
        .par_iter()
        .map(|&(i, j)| {
            let bank = if banks.len() == 1 { &banks[0] } else { &banks[i] };
            let response = temporal_convolve(stack.matrices[i].view(), bank.filter(j))?;
            let mut pooled = spatial_max_pool(response.view(), delta, order)?;
            pooled.mapv_inplace(f64::tanh);
            Ok(pooled)
        })
        .collect::<Result<Vec<_>>>()?;
    let provenance = jobs
        .iter()
        .map(|&(i, j)| {
            let mut path = stack.provenance[i].clone();
            path.push(j);
            path
        })
        .collect();
    Ok(ResponseStack {
        matrices,
        provenance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub tau1: usize,
    pub tau2: usize,
    pub delta1: usize,
    pub delta2: usize,
    pub layer1_hyper: AEHyper,
    /// Layer-2 settings; the seed of bank `i` is `layer1_hyper.seed + 1 + i`.
    pub layer2_hyper: AEHyper,
    /// Training windows per autoencoder.
    pub windows: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau1: 6,
            tau2: 9,
            delta1: 2,
            delta2: 2,
            layer1_hyper: AEHyper::default(),
            layer2_hyper: AEHyper {
                k: 4,
                ..AEHyper::default()
            },
            windows: DEFAULT_WINDOWS,
        }
    }
}

impl PipelineConfig {
    /// Check the configuration against an `m x n` dataset for a pipeline of
    /// the given depth.
    pub fn validate_for(&self, m: usize, n: usize, depth: usize) -> Result<()> {
        if !(1..=2).contains(&depth) {
            return Err(Error::config(format!("depth must be 1 or 2, got {depth}")));
        }
        if self.tau1 == 0 || self.tau1 > n || self.tau2 == 0 || self.tau2 > n {
            return Err(Error::config(format!(
                "window lengths tau1={} tau2={} must be in 1..={n}",
                self.tau1, self.tau2
            )));
        }
        if self.windows == 0 {
            return Err(Error::config("window count must be positive"));
        }
        self.layer1_hyper.validate()?;
        if self.delta1 == 0 || m % self.delta1 != 0 {
            return Err(Error::config(format!("delta1={} does not divide m={m}", self.delta1)));
        }
        if depth == 2 {
            self.layer2_hyper.validate()?;
            let pooled = m / self.delta1;
            if self.delta2 == 0 || pooled % self.delta2 != 0 {
                return Err(Error::config(format!(
                    "delta2={} does not divide m/delta1={pooled}",
                    self.delta2
                )));
            }
        }
        Ok(())
    }
}

/// Trained filters of both blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModel {
    pub layer1: FilterBank,
    /// One bank per layer-1 filter; empty for a single-block model.
    pub layer2: Vec<FilterBank>,
    pub config: PipelineConfig,
    pub voxel_order: Vec<usize>,
}

impl PipelineModel {
    pub fn depth(&self) -> usize {
        if self.layer2.is_empty() {
            1
        } else {
            2
        }
    }

    pub fn k1(&self) -> usize {
        self.layer1.k()
    }

    pub fn k2(&self) -> Option<usize> {
        self.layer2.first().map(FilterBank::k)
    }
}

/// Train both blocks on `d`.
pub fn pretrain(d: &VTDataset, cfg: &PipelineConfig) -> Result<PipelineModel> {
    pretrain_depth(d, cfg, 2)
}

/// Train the first `depth` blocks. Windows overlapping the neighbourhood of
/// any retrieve-phase label are never used.
pub fn pretrain_depth(d: &VTDataset, cfg: &PipelineConfig, depth: usize) -> Result<PipelineModel> {
    cfg.validate_for(d.m(), d.n(), depth)?;
    let excluded = test_exclusion_columns(d, cfg.tau1, cfg.tau2);

    let h1 = &cfg.layer1_hyper;
    let windows = sample_windows(
        d.values().view(),
        cfg.tau1,
        cfg.windows,
        &excluded,
        derive_seed(h1.seed, "windows"),
    )?;
    let layer1 = train(&windows, h1)?;

    let mut layer2 = Vec::new();
    if depth == 2 {
        let pooled = apply_block(
            &ResponseStack::single(d.values().clone()),
            std::slice::from_ref(&layer1),
            cfg.delta1,
            d.voxel_order(),
        )?;
        layer2 = pooled
            .matrices
            .par_iter()
            .enumerate()
            .map(|(i, matrix)| {
                let hyper = layer2_hyper(cfg, i);
                let windows = sample_windows(
                    matrix.view(),
                    cfg.tau2,
                    cfg.windows,
                    &excluded,
                    derive_seed(hyper.seed, "windows"),
                )?;
                train(&windows, &hyper)
            })
            .collect::<Result<Vec<_>>>()?;
    }

    Ok(PipelineModel {
        layer1,
        layer2,
        config: cfg.clone(),
        voxel_order: d.voxel_order().to_vec(),
    })
}

/// Settings of the layer-2 autoencoder fed by pooled matrix `index`.
pub fn layer2_hyper(cfg: &PipelineConfig, index: usize) -> AEHyper {
    AEHyper {
        seed: cfg
            .layer1_hyper
            .seed
            .wrapping_add(1)
            .wrapping_add(index as u64),
        ..cfg.layer2_hyper.clone()
    }
}

/// Block-1 output stack for `d`.
pub fn block1(d: &VTDataset, model: &PipelineModel) -> Result<ResponseStack> {
    check_model_fits(d, model)?;
    apply_block(
        &ResponseStack::single(d.values().clone()),
        std::slice::from_ref(&model.layer1),
        model.config.delta1,
        &model.voxel_order,
    )
}

fn check_model_fits(d: &VTDataset, model: &PipelineModel) -> Result<()> {
    if model.voxel_order.len() != d.m() {
        return Err(Error::contract(format!(
            "model was trained on {} voxels, dataset has {}",
            model.voxel_order.len(),
            d.m()
        )));
    }
    if model.layer1.tau > d.n() {
        return Err(Error::contract("dataset is shorter than the layer-1 filters"));
    }
    Ok(())
}

/// The final representation: every output matrix of the last requested
/// block stacked along rows. The column count stays `n`.
pub fn transform(d: &VTDataset, model: &PipelineModel, depth: usize) -> Result<Array2<f64>> {
    Ok(transform_stack(d, model, depth)?.concatenate_rows())
}

pub fn transform_stack(d: &VTDataset, model: &PipelineModel, depth: usize) -> Result<ResponseStack> {
    match depth {
        1 => block1(d, model),
        2 => {
            if model.layer2.len() != model.k1() {
                return Err(Error::contract(format!(
                    "depth 2 needs {} layer-2 banks, model has {}",
                    model.k1(),
                    model.layer2.len()
                )));
            }
            let first = block1(d, model)?;
            let rows = first.shape().expect("k1 > 0").0;
            let identity: Vec<usize> = (0..rows).collect();
            apply_block(&first, &model.layer2, model.config.delta2, &identity)
        }
        other => Err(Error::contract(format!("depth must be 1 or 2, got {other}"))),
    }
}

/// Row count of [`transform`]'s output: `m k1 / delta1` for one block,
/// `m k1 k2 / (delta1 delta2)` for two.
pub fn output_dim(m: usize, k1: usize, k2: usize, delta1: usize, delta2: usize, depth: usize) -> Result<usize> {
    if delta1 == 0 || m % delta1 != 0 {
        return Err(Error::contract(format!("delta1={delta1} does not divide m={m}")));
    }
    match depth {
        1 => Ok(m / delta1 * k1),
        2 => {
            let pooled = m / delta1;
            if delta2 == 0 || pooled % delta2 != 0 {
                return Err(Error::contract(format!(
                    "delta2={delta2} does not divide m/delta1={pooled}"
                )));
            }
            Ok(pooled / delta2 * k1 * k2)
        }
        other => Err(Error::contract(format!("depth must be 1 or 2, got {other}"))),
    }
}

// --- persistence ----------------------------------------------------------

const MODEL_MAGIC: &str = "TCNN-MODEL";
const MODEL_VERSION: &str = "1";

fn write_hyper(text: &mut String, prefix: &str, h: &AEHyper) {
    let _ = writeln!(text, "{prefix}.k={}", h.k);
    let _ = writeln!(text, "{prefix}.rho={}", h.rho);
    let _ = writeln!(text, "{prefix}.beta={}", h.beta);
    let _ = writeln!(text, "{prefix}.lambda={}", h.lambda);
    let _ = writeln!(text, "{prefix}.max_iters={}", h.max_iters);
    let _ = writeln!(text, "{prefix}.step_size={}", h.step_size);
    let _ = writeln!(text, "{prefix}.seed={}", h.seed);
}

fn read_hyper(pairs: &[(&str, &str)], prefix: &str) -> Result<AEHyper, ParseError> {
    let key = |name: &str| format!("{prefix}.{name}");
    Ok(AEHyper {
        k: header_value(pairs, &key("k"))?,
        rho: header_value(pairs, &key("rho"))?,
        beta: header_value(pairs, &key("beta"))?,
        lambda: header_value(pairs, &key("lambda"))?,
        max_iters: header_value(pairs, &key("max_iters"))?,
        step_size: header_value(pairs, &key("step_size"))?,
        seed: header_value(pairs, &key("seed"))?,
    })
}

/// Single-file model: a `key=value` manifest (configuration, voxel order,
/// bank count), a blank line, then every filter bank in its own format,
/// layer 1 first.
pub fn encode_model(model: &PipelineModel) -> Vec<u8> {
    let c = &model.config;
    let mut text = String::new();
    let _ = writeln!(text, "magic={MODEL_MAGIC}");
    let _ = writeln!(text, "version={MODEL_VERSION}");
    let _ = writeln!(text, "tau1={}\ntau2={}", c.tau1, c.tau2);
    let _ = writeln!(text, "delta1={}\ndelta2={}", c.delta1, c.delta2);
    let _ = writeln!(text, "windows={}", c.windows);
    write_hyper(&mut text, "layer1", &c.layer1_hyper);
    write_hyper(&mut text, "layer2", &c.layer2_hyper);
    let order: Vec<String> = model.voxel_order.iter().map(usize::to_string).collect();
    let _ = writeln!(text, "voxel_order={}", order.join(","));
    let _ = writeln!(text, "banks={}", 1 + model.layer2.len());
    text.push('\n');
    let mut bytes = text.into_bytes();
    bytes.extend(encode_filter_bank(&model.layer1));
    for bank in &model.layer2 {
        bytes.extend(encode_filter_bank(bank));
    }
    bytes
}

pub fn decode_model(mut bytes: &[u8]) -> Result<PipelineModel, ParseError> {
    let header = read_header(&mut bytes)?;
    let magic: String = header_value(&header, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(ParseError::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let version: String = header_value(&header, "version")?;
    if version != MODEL_VERSION {
        return Err(ParseError::UnknownVersion(version));
    }
    let config = PipelineConfig {
        tau1: header_value(&header, "tau1")?,
        tau2: header_value(&header, "tau2")?,
        delta1: header_value(&header, "delta1")?,
        delta2: header_value(&header, "delta2")?,
        layer1_hyper: read_hyper(&header, "layer1")?,
        layer2_hyper: read_hyper(&header, "layer2")?,
        windows: header_value(&header, "windows")?,
    };
    let order: String = header_value(&header, "voxel_order")?;
    let voxel_order = order
        .split(',')
        .map(str::parse)
        .collect::<Result<Vec<usize>, _>>()
        .map_err(|_| ParseError::MalformedHeader("bad voxel_order".into()))?;
    let banks: usize = header_value(&header, "banks")?;
    if banks == 0 {
        return Err(ParseError::InvariantViolation("model has no filter banks".into()));
    }
    let layer1 = decode_filter_bank_from(&mut bytes)?;
    let layer2 = (1..banks)
        .map(|_| decode_filter_bank_from(&mut bytes))
        .collect::<Result<Vec<_>, _>>()?;
    if !bytes.is_empty() {
        return Err(ParseError::MalformedHeader("trailing bytes after last bank".into()));
    }
    if !layer2.is_empty() && layer2.len() != layer1.k() {
        return Err(ParseError::InvariantViolation(format!(
            "{} layer-2 banks for {} layer-1 filters",
            layer2.len(),
            layer1.k()
        )));
    }
    Ok(PipelineModel {
        layer1,
        layer2,
        config,
        voxel_order,
    })
}

pub fn save_model(model: &PipelineModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PipelineModel> {
    let path = path.as_ref();
    decode_model(&std::fs::read(path)?).map_err(|source| Error::Parse {
        path: path.to_owned(),
        source,
    })
}
