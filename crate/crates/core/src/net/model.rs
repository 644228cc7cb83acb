use rayon::prelude::*;

use super::params::{DenseLayer, PpfNetParams, DESCRIPTOR_DIM, POINT_WIDTH};
use crate::cloud::Vec3;
use crate::encode::PatchEncoding;
use crate::error::{Error, Result};

/// Patches handled by one backward work unit. Fixed so the gradient
/// reduction order does not depend on the worker count.
const BACKWARD_CHUNK: usize = 8;

/// Row-major `rows × dim` matrix of descriptors or other per-keypoint features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::shape(format!("{} values for a {rows}x{dim} matrix", data.len())));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Descriptors of one fragment together with the keypoints they describe.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub features: FeatureMatrix,
    pub keypoints: Vec<Vec3>,
    /// Index of each keypoint in its source cloud.
    pub keypoint_indices: Vec<usize>,
}

impl DescriptorSet {
    pub fn new(features: FeatureMatrix, keypoints: Vec<Vec3>, keypoint_indices: Vec<usize>) -> Result<Self> {
        if features.rows != keypoints.len() || keypoints.len() != keypoint_indices.len() {
            return Err(Error::shape(format!(
                "{} descriptors for {} keypoints ({} indices)",
                features.rows,
                keypoints.len(),
                keypoint_indices.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::invalid("descriptor matrix has non-finite entries"));
        }
        Ok(Self {
            features,
            keypoints,
            keypoint_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.features.dim
    }
}

/// Activations of one max-pool winner row.
#[derive(Debug, Clone)]
struct WinnerRow {
    row: usize,
    input: Vec<f64>,
    pre1: Vec<f64>,
    pre2: Vec<f64>,
}

#[derive(Debug, Clone)]
struct PatchCache {
    /// Winning row of every local-feature channel, lowest index on ties.
    argmax: [usize; POINT_WIDTH],
    /// Distinct winner rows, ascending.
    winners: Vec<WinnerRow>,
    /// Fusion input `[ℓ ‖ g]` (or `ℓ` without global context).
    fusion_in: Vec<f64>,
    fusion_pre1: Vec<f64>,
}

/// What backward needs from a forward pass. Max pooling sends gradient to a
/// single row per channel, so only winner rows keep their activations.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    rows: usize,
    input_dim: usize,
    global_context: bool,
    patches: Vec<PatchCache>,
    /// Patch attaining the global max of every channel, lowest index on ties.
    global_argmax: [usize; POINT_WIDTH],
}

impl ForwardCache {
    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    pub fn rows_per_patch(&self) -> usize {
        self.rows
    }

    pub fn global_argmax(&self) -> &[usize; POINT_WIDTH] {
        &self.global_argmax
    }

    pub fn local_argmax(&self, patch: usize) -> &[usize; POINT_WIDTH] {
        &self.patches[patch].argmax
    }
}

#[inline]
fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

struct PointActivations {
    pre1: [f64; POINT_WIDTH],
    pre2: [f64; POINT_WIDTH],
    out: [f64; POINT_WIDTH],
}

#[inline]
fn point_mlp(layers: &[DenseLayer; 3], x: &[f64]) -> PointActivations {
    let mut pre1 = [0.0; POINT_WIDTH];
    layers[0].forward_into(x, &mut pre1);
    let mut a1 = pre1;
    relu_in_place(&mut a1);
    let mut pre2 = [0.0; POINT_WIDTH];
    layers[1].forward_into(&a1, &mut pre2);
    let mut a2 = pre2;
    relu_in_place(&mut a2);
    let mut out = [0.0; POINT_WIDTH];
    layers[2].forward_into(&a2, &mut out);
    PointActivations { pre1, pre2, out }
}

fn check_encodings(params: &PpfNetParams, encodings: &[PatchEncoding]) -> Result<usize> {
    let first = encodings
        .first()
        .ok_or_else(|| Error::invalid("forward needs at least one patch"))?;
    let rows = first.rows;
    if rows == 0 {
        return Err(Error::shape("patches have no rows"));
    }
    for (k, e) in encodings.iter().enumerate() {
        if e.rows != rows || e.dim() != params.input_dim() || e.data.len() != e.rows * e.dim() {
            return Err(Error::shape(format!(
                "patch {k} is {}x{}, expected {rows}x{}",
                e.rows,
                e.dim(),
                params.input_dim()
            )));
        }
    }
    Ok(rows)
}

/// Local feature of one patch: channel-wise max over its rows.
fn pool_patch(layers: &[DenseLayer; 3], enc: &PatchEncoding) -> ([f64; POINT_WIDTH], [usize; POINT_WIDTH], Vec<WinnerRow>) {
    let mut best = [f64::NEG_INFINITY; POINT_WIDTH];
    let mut argmax = [0usize; POINT_WIDTH];
    for r in 0..enc.rows {
        let act = point_mlp(layers, enc.row(r));
        for c in 0..POINT_WIDTH {
            if act.out[c] > best[c] {
                best[c] = act.out[c];
                argmax[c] = r;
            }
        }
    }
    let mut rows: Vec<usize> = argmax.to_vec();
    rows.sort_unstable();
    rows.dedup();
    let winners = rows
        .into_iter()
        .map(|row| {
            let input = enc.row(row).to_vec();
            let act = point_mlp(layers, &input);
            WinnerRow {
                row,
                input,
                pre1: act.pre1.to_vec(),
                pre2: act.pre2.to_vec(),
            }
        })
        .collect();
    (best, argmax, winners)
}

/// Descriptors of the `N` patches of one fragment.
///
/// Every row of every patch goes through the shared point MLP; the patch
/// max-pool gives the 32-d local feature `ℓ_k`, the max over all `ℓ_k` the
/// global feature `g`, and the fusion MLP maps `[ℓ_k ‖ g]` to 64 dimensions.
pub fn forward(params: &PpfNetParams, encodings: &[PatchEncoding]) -> Result<(FeatureMatrix, ForwardCache)> {
    params.validate()?;
    let rows = check_encodings(params, encodings)?;

    let pooled: Vec<_> = encodings
        .par_iter()
        .map(|enc| pool_patch(&params.point_mlp, enc))
        .collect();

    let mut global = [f64::NEG_INFINITY; POINT_WIDTH];
    let mut global_argmax = [0usize; POINT_WIDTH];
    for (k, (local, _, _)) in pooled.iter().enumerate() {
        for c in 0..POINT_WIDTH {
            if local[c] > global[c] {
                global[c] = local[c];
                global_argmax[c] = k;
            }
        }
    }

    let global_context = params.arch.global_context;
    let fused: Vec<(PatchCache, [f64; DESCRIPTOR_DIM])> = pooled
        .into_par_iter()
        .map(|(local, argmax, winners)| {
            let mut fusion_in = local.to_vec();
            if global_context {
                fusion_in.extend_from_slice(&global);
            }
            let mut fusion_pre1 = vec![0.0; DESCRIPTOR_DIM];
            params.fusion_mlp[0].forward_into(&fusion_in, &mut fusion_pre1);
            let mut hidden = fusion_pre1.clone();
            relu_in_place(&mut hidden);
            let mut out = [0.0; DESCRIPTOR_DIM];
            params.fusion_mlp[1].forward_into(&hidden, &mut out);
            (
                PatchCache {
                    argmax,
                    winners,
                    fusion_in,
                    fusion_pre1,
                },
                out,
            )
        })
        .collect();

    let mut features = FeatureMatrix::zeros(encodings.len(), DESCRIPTOR_DIM);
    let mut patches = Vec::with_capacity(encodings.len());
    for (k, (cache, out)) in fused.into_iter().enumerate() {
        features.row_mut(k).copy_from_slice(&out);
        patches.push(cache);
    }
    Ok((
        features,
        ForwardCache {
            rows,
            input_dim: params.input_dim(),
            global_context,
            patches,
            global_argmax,
        },
    ))
}

/// Gradients of `Σ grad ∘ descriptors` with respect to every parameter.
///
/// Max pools route their gradient to the cached winner, so the result is exact
/// wherever the forward map is differentiable.
pub fn backward(params: &PpfNetParams, cache: &ForwardCache, grad: &FeatureMatrix) -> Result<PpfNetParams> {
    let n = cache.patches.len();
    if grad.rows != n || grad.dim != DESCRIPTOR_DIM {
        return Err(Error::shape(format!(
            "upstream gradient is {}x{}, cache holds {n} patches of width {DESCRIPTOR_DIM}",
            grad.rows, grad.dim
        )));
    }
    if params.input_dim() != cache.input_dim || params.arch.global_context != cache.global_context {
        return Err(Error::shape("cache was produced by a different architecture"));
    }
    let mut grads = params.zeros_like();

    // Fusion MLP, patch by patch in index order.
    let fin = params.arch.fusion_input();
    let mut local_grads = vec![[0.0; POINT_WIDTH]; n];
    let mut global_grad = [0.0; POINT_WIDTH];
    let mut d_hidden = vec![0.0; DESCRIPTOR_DIM];
    let mut d_in = vec![0.0; fin];
    for (k, pc) in cache.patches.iter().enumerate() {
        let dy = grad.row(k);
        if dy.iter().all(|&g| g == 0.0) {
            continue;
        }
        let mut hidden = pc.fusion_pre1.clone();
        relu_in_place(&mut hidden);
        let [f1, f2] = &mut grads.fusion_mlp;
        params.fusion_mlp[1].backward_into(&hidden, dy, f2, Some(&mut d_hidden));
        for (d, &pre) in d_hidden.iter_mut().zip(&pc.fusion_pre1) {
            if pre <= 0.0 {
                *d = 0.0;
            }
        }
        params.fusion_mlp[0].backward_into(&pc.fusion_in, &d_hidden, f1, Some(&mut d_in));
        local_grads[k].copy_from_slice(&d_in[..POINT_WIDTH]);
        if cache.global_context {
            for (g, d) in global_grad.iter_mut().zip(&d_in[POINT_WIDTH..]) {
                *g += d;
            }
        }
    }
    for (c, &k) in cache.global_argmax.iter().enumerate() {
        local_grads[k][c] += global_grad[c];
    }

    // Point MLP: fixed-size chunks in parallel, reduced in chunk order.
    let partials: Vec<[DenseLayer; 3]> = cache
        .patches
        .par_chunks(BACKWARD_CHUNK)
        .zip(local_grads.par_chunks(BACKWARD_CHUNK))
        .map(|(pcs, dls)| {
            let mut acc = grads.point_mlp.clone();
            for layer in acc.iter_mut() {
                layer.weights.iter_mut().for_each(|v| *v = 0.0);
                layer.bias.iter_mut().for_each(|v| *v = 0.0);
            }
            for (pc, dl) in pcs.iter().zip(dls) {
                point_backward(&params.point_mlp, pc, dl, &mut acc);
            }
            acc
        })
        .collect();
    for part in &partials {
        for (dst, src) in grads.point_mlp.iter_mut().zip(part) {
            dst.weights.iter_mut().zip(&src.weights).for_each(|(a, b)| *a += b);
            dst.bias.iter_mut().zip(&src.bias).for_each(|(a, b)| *a += b);
        }
    }
    Ok(grads)
}

/// Backpropagates a local-feature gradient through the winner rows of one patch.
fn point_backward(layers: &[DenseLayer; 3], pc: &PatchCache, d_local: &[f64; POINT_WIDTH], acc: &mut [DenseLayer; 3]) {
    let mut d_out = [0.0; POINT_WIDTH];
    let mut d_a2 = [0.0; POINT_WIDTH];
    let mut d_a1 = [0.0; POINT_WIDTH];
    for w in &pc.winners {
        let mut any = false;
        for c in 0..POINT_WIDTH {
            d_out[c] = if pc.argmax[c] == w.row { d_local[c] } else { 0.0 };
            any |= d_out[c] != 0.0;
        }
        if !any {
            continue;
        }
        let mut a2 = w.pre2.clone();
        relu_in_place(&mut a2);
        let mut a1 = w.pre1.clone();
        relu_in_place(&mut a1);
        let [l1, l2, l3] = acc;
        layers[2].backward_into(&a2, &d_out, l3, Some(&mut d_a2));
        for (d, &pre) in d_a2.iter_mut().zip(&w.pre2) {
            if pre <= 0.0 {
                *d = 0.0;
            }
        }
        layers[1].backward_into(&a1, &d_a2, l2, Some(&mut d_a1));
        for (d, &pre) in d_a1.iter_mut().zip(&w.pre1) {
            if pre <= 0.0 {
                *d = 0.0;
            }
        }
        layers[0].backward_into(&w.input, &d_a1, l1, None);
    }
}
