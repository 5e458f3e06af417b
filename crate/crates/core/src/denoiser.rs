//! The alternating denoiser: graph construction, then dictionary and code
//! stages until the objective settles, then the closed-form image update.

use std::fmt::Write as _;
use std::time::Instant;

use log::{debug, info};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Deserialize;

use crate::coder::{coding_objective, locality_adaptors, update_codes, CodeParams, CodeSet};
use crate::dictionary::{init_dct_dictionary, ksvd_update, Dictionary};
use crate::error::{CpscError, Result};
use crate::graph::{build_graph, select_nodes, GraphModel, GraphParams, LrrParams};
use crate::patch::{aggregate_image, extract_patches, ImagePlane, PatchSet};

/// When the image estimate is recomputed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageUpdate {
    /// Once, after the alternating loop.
    #[default]
    Final,
    /// After every outer iteration; patches are re-extracted from the new estimate.
    EveryIteration,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    pub max_outer_iters: usize,
    pub mu: f64,
    pub rho: f64,
    pub lambda: f64,
    pub patch_side: usize,
    pub patch_stride: usize,
    pub atom_count: usize,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub sigma: f64,
    pub graph_stride: usize,
    pub node_cap: usize,
    pub region_side: usize,
    pub stop_rel_tol: f64,
    pub l1_weight: f64,
    pub code_sweeps: usize,
    pub lrr_tol: f64,
    pub lrr_max_iter: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    pub tile_size: usize,
    pub tile_overlap: usize,
    /// Images wider or taller than this are tiled.
    pub tile_threshold: usize,
    pub image_update: ImageUpdate,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        let graph = GraphParams::default();
        DenoiseConfig {
            max_outer_iters: 100,
            mu: 1.2,
            rho: 0.5,
            lambda: 0.3,
            patch_side: 8,
            patch_stride: 1,
            atom_count: 256,
            alpha: graph.lrr.alpha,
            beta: graph.lrr.beta,
            delta: 80.0,
            sigma: 20.0,
            graph_stride: 2,
            node_cap: 256,
            region_side: graph.region_side,
            stop_rel_tol: 1e-4,
            l1_weight: 0.0,
            code_sweeps: 3,
            lrr_tol: graph.lrr.tol,
            lrr_max_iter: graph.lrr.max_iter,
            sinkhorn_tol: graph.sinkhorn_tol,
            sinkhorn_max_iter: graph.sinkhorn_max_iter,
            tile_size: 64,
            tile_overlap: 8,
            tile_threshold: 96,
            image_update: ImageUpdate::Final,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.mu, self.lambda, self.delta, self.alpha, self.beta, self.lrr_tol, self.sinkhorn_tol];
        let nonneg = [self.rho, self.sigma, self.stop_rel_tol, self.l1_weight];
        let counts = [
            self.patch_side,
            self.patch_stride,
            self.atom_count,
            self.graph_stride,
            self.node_cap,
            self.code_sweeps,
            self.lrr_max_iter,
            self.sinkhorn_max_iter,
        ];
        let problem = if !positive.iter().all(|&v| v > 0.0 && v.is_finite()) {
            Some("mu, lambda, delta, alpha, beta and the solver tolerances must be positive")
        } else if !nonneg.iter().all(|&v| v >= 0.0 && v.is_finite()) {
            Some("rho, sigma, stop_rel_tol and l1_weight must be nonnegative")
        } else if counts.contains(&0) {
            Some("sizes, strides and iteration limits must be positive")
        } else if self.region_side < 2 {
            Some("region_side must be at least 2")
        } else if self.tile_size < self.patch_side || self.tile_overlap >= self.tile_size {
            Some("tile_size must cover a patch and exceed tile_overlap")
        } else {
            None
        };
        match problem {
            Some(msg) => Err(CpscError::arg(format!("invalid configuration: {msg}"))),
            None => Ok(()),
        }
    }

    pub fn code_params(&self) -> CodeParams {
        CodeParams {
            mu: self.mu,
            rho: self.rho,
            lambda: self.lambda,
            delta: self.delta,
            l1_weight: self.l1_weight,
            sweeps: self.code_sweeps,
        }
    }

    pub fn graph_params(&self) -> GraphParams {
        GraphParams {
            lrr: LrrParams {
                alpha: self.alpha,
                beta: self.beta,
                tol: self.lrr_tol,
                max_iter: self.lrr_max_iter,
                ..LrrParams::default()
            },
            region_side: self.region_side,
            sinkhorn_tol: self.sinkhorn_tol,
            sinkhorn_max_iter: self.sinkhorn_max_iter,
        }
    }
}

/// Terms of the whole-image objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveTerms {
    /// `||Y - X||^2`
    pub data: f64,
    /// `mu sum_i ||D s_i - U_i X||^2` over mean-removed patches.
    pub fidelity: f64,
    /// `rho Tr(S_G L S_G^T)`
    pub graph: f64,
    /// `lambda sum_i ||phi_i .* s_i||^2`
    pub locality: f64,
    /// `eta ||S||_1`, zero unless the l1 option is on.
    pub sparsity: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.data + self.fidelity + self.graph + self.locality + self.sparsity
    }
}

/// Evaluates the objective at `x`, recomputing patches and adaptors from it.
pub fn cpsc_objective(
    x: &ImagePlane,
    d: &Dictionary,
    codes: &DMatrix<f64>,
    y: &ImagePlane,
    graph: Option<&GraphModel>,
    cfg: &DenoiseConfig,
) -> Result<ObjectiveTerms> {
    if !x.same_shape(y) {
        return Err(CpscError::arg("estimate and observation differ in shape"));
    }
    let patches = extract_patches(x, cfg.patch_side, cfg.patch_stride)?;
    let adaptors = locality_adaptors(&patches.vectors, d, cfg.delta)?;
    let mut set = CodeSet::zeros(d.len(), patches.len());
    set.codes = codes.clone();
    set.adaptors = adaptors;
    Ok(combine(x, y, coding_objective(d, &patches.vectors, graph, &cfg.code_params(), &set)?))
}

fn combine(x: &ImagePlane, y: &ImagePlane, c: crate::coder::CodingObjective) -> ObjectiveTerms {
    let data = x.pixels().iter().zip(y.pixels()).map(|(a, b)| (a - b) * (a - b)).sum();
    ObjectiveTerms {
        data,
        fidelity: c.fidelity,
        graph: c.graph,
        locality: c.locality,
        sparsity: c.sparsity,
    }
}

/// One outer iteration (iteration 0 is the initial code stage).
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub terms: ObjectiveTerms,
    pub code_delta: f64,
    pub millis: f64,
    /// False when the dictionary stage raised the objective and was undone.
    pub dictionary_accepted: bool,
    pub replaced_atoms: usize,
    pub unnormalized: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    IterationCap,
}

impl StopReason {
    fn as_str(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::IterationCap => "iteration_cap",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TileTrace {
    /// Top-left pixel of the tile.
    pub origin: (usize, usize),
    pub width: usize,
    pub height: usize,
    pub nodes: usize,
    pub node_stride: usize,
    pub lrr_iterations: usize,
    pub sinkhorn_iterations: usize,
    /// Always 1: the graph is built before the loop and kept.
    pub graph_builds: usize,
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl TileTrace {
    /// Outer iterations run, not counting the initial code stage.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

#[derive(Clone, Debug, Default)]
pub struct DenoiseTrace {
    pub tiles: Vec<TileTrace>,
}

impl DenoiseTrace {
    /// Largest outer iteration count over the tiles.
    pub fn iterations(&self) -> usize {
        self.tiles.iter().map(TileTrace::iterations).max().unwrap_or(0)
    }

    /// Line-oriented `key=value` text: a header line per tile followed by
    /// one line per iteration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, tile) in self.tiles.iter().enumerate() {
            let _ = writeln!(
                out,
                "tile={t} row={} col={} width={} height={} nodes={} node_stride={} lrr_iterations={} sinkhorn_iterations={} graph_builds={} stop={}",
                tile.origin.0,
                tile.origin.1,
                tile.width,
                tile.height,
                tile.nodes,
                tile.node_stride,
                tile.lrr_iterations,
                tile.sinkhorn_iterations,
                tile.graph_builds,
                tile.stop.as_str()
            );
            for r in &tile.records {
                let _ = writeln!(
                    out,
                    "tile={t} iter={} total={:.10e} data={:.10e} fidelity={:.10e} graph={:.10e} locality={:.10e} sparsity={:.10e} code_delta={:.6e} dictionary={} replaced={} unnormalized={} ms={:.1}",
                    r.iteration,
                    r.terms.total(),
                    r.terms.data,
                    r.terms.fidelity,
                    r.terms.graph,
                    r.terms.locality,
                    r.terms.sparsity,
                    r.code_delta,
                    if r.dictionary_accepted { "accepted" } else { "reverted" },
                    r.replaced_atoms,
                    r.unnormalized,
                    r.millis
                );
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct DenoiseOutput {
    pub image: ImagePlane,
    pub trace: DenoiseTrace,
    /// One graph, learned dictionary and final code matrix per tile.
    pub graphs: Vec<GraphModel>,
    pub dictionaries: Vec<Dictionary>,
    pub codes: Vec<DMatrix<f64>>,
}

/// Denoises `y` with the DCT dictionary as the starting point.
pub fn denoise(y: &ImagePlane, cfg: &DenoiseConfig) -> Result<DenoiseOutput> {
    denoise_with(y, cfg, None)
}

/// Denoises `y`, starting every tile from `initial` when given.
pub fn denoise_with(y: &ImagePlane, cfg: &DenoiseConfig, initial: Option<&Dictionary>) -> Result<DenoiseOutput> {
    cfg.validate()?;
    let r = cfg.patch_side * cfg.patch_side;
    if y.width() < cfg.patch_side || y.height() < cfg.patch_side {
        return Err(CpscError::arg(format!(
            "image {}x{} is smaller than the {}-pixel patch",
            y.width(),
            y.height(),
            cfg.patch_side
        )));
    }
    let start = match initial {
        Some(d) if d.dim() != r => {
            return Err(CpscError::arg(format!(
                "initial dictionary has {}-dimensional atoms, patches have {r}",
                d.dim()
            )))
        }
        Some(d) => d.clone(),
        None => init_dct_dictionary(r, cfg.atom_count)?,
    };

    let tiled = y.width() > cfg.tile_threshold || y.height() > cfg.tile_threshold;
    let (rows, cols) = if tiled {
        (
            tile_starts(y.height(), cfg.tile_size, cfg.tile_overlap),
            tile_starts(y.width(), cfg.tile_size, cfg.tile_overlap),
        )
    } else {
        (vec![0], vec![0])
    };
    let tiles: Vec<(usize, usize, usize, usize)> = rows
        .iter()
        .flat_map(|&r0| {
            cols.iter().map(move |&c0| {
                let h = if tiled { cfg.tile_size.min(y.height()) } else { y.height() };
                let w = if tiled { cfg.tile_size.min(y.width()) } else { y.width() };
                (r0, c0, w, h)
            })
        })
        .collect();

    let results: Vec<TileResult> = tiles
        .par_iter()
        .enumerate()
        .map(|(t, &(r0, c0, w, h))| {
            let crop = y.crop(r0, c0, w, h)?;
            denoise_tile(&crop, cfg, &start, (r0, c0))
                .map_err(|e| e.context(format!("tile {t} at row {r0}, column {c0}")))
        })
        .collect::<Result<_>>()?;

    let mut sum = vec![0.0; y.len()];
    let mut count = vec![0u32; y.len()];
    let mut out = DenoiseOutput {
        image: y.clone(),
        trace: DenoiseTrace::default(),
        graphs: Vec::with_capacity(results.len()),
        dictionaries: Vec::with_capacity(results.len()),
        codes: Vec::with_capacity(results.len()),
    };
    for (res, &(r0, c0, w, h)) in results.into_iter().zip(&tiles) {
        for dr in 0..h {
            for dc in 0..w {
                let idx = (r0 + dr) * y.width() + c0 + dc;
                sum[idx] += res.image.get(dr, dc);
                count[idx] += 1;
            }
        }
        out.trace.tiles.push(res.trace);
        out.graphs.push(res.graph);
        out.dictionaries.push(res.dictionary);
        out.codes.push(res.codes);
    }
    let data = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    out.image = ImagePlane::new(y.width(), y.height(), data)?;
    Ok(out)
}

/// Evenly spread tile offsets along an axis of length `n`.
pub fn tile_starts(n: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if n <= tile {
        return vec![0];
    }
    let count = (n - overlap).div_ceil(tile - overlap);
    let span = n - tile;
    (0..count)
        .map(|i| ((i * span) as f64 / (count - 1) as f64).round() as usize)
        .collect()
}

struct TileResult {
    image: ImagePlane,
    trace: TileTrace,
    graph: GraphModel,
    dictionary: Dictionary,
    codes: DMatrix<f64>,
}

struct State {
    dictionary: Dictionary,
    codes: CodeSet,
    terms: ObjectiveTerms,
}

fn estimates(d: &Dictionary, codes: &DMatrix<f64>, patches: &PatchSet) -> DMatrix<f64> {
    patches.with_means(&(d.atoms() * codes))
}

fn denoise_tile(y: &ImagePlane, cfg: &DenoiseConfig, start: &Dictionary, origin: (usize, usize)) -> Result<TileResult> {
    let params = cfg.code_params();
    let mut x = y.clone();
    let mut patches = extract_patches(&x, cfg.patch_side, cfg.patch_stride)?;

    let (node_ids, node_stride) = select_nodes(patches.grid, cfg.graph_stride, cfg.node_cap)?;
    let graph = build_graph(&patches.vectors, node_ids, cfg.sigma, &cfg.graph_params())?;
    debug!(
        "tile {origin:?}: {} nodes at stride {node_stride}, lrr {} iterations",
        graph.len(),
        graph.lrr_iterations
    );

    let clock = Instant::now();
    let first = update_codes(start, &patches, Some(&graph), &params, &CodeSet::zeros(start.len(), patches.len()))
        .map_err(|e| e.context("initial code stage"))?;
    let terms = combine(&x, y, coding_objective(start, &patches.vectors, Some(&graph), &params, &first.codes)?);
    let mut records = vec![IterationRecord {
        iteration: 0,
        terms,
        code_delta: first.delta,
        millis: clock.elapsed().as_secs_f64() * 1e3,
        dictionary_accepted: true,
        replaced_atoms: 0,
        unnormalized: first.codes.unnormalized_count(),
    }];
    let mut state = State {
        dictionary: start.clone(),
        codes: first.codes,
        terms,
    };

    let mut stop = StopReason::IterationCap;
    for iter in 1..=cfg.max_outer_iters {
        let clock = Instant::now();
        let stage = |msg: &str| format!("{msg} in outer iteration {iter}");
        let mut trial_codes = state.codes.clone();
        let sweep = ksvd_update(&state.dictionary, &mut trial_codes, &patches.vectors)
            .map_err(|e| e.context(stage("dictionary stage")))?;
        let update = update_codes(&sweep.dictionary, &patches, Some(&graph), &params, &trial_codes)
            .map_err(|e| e.context(stage("code stage")))?;
        let mut terms = combine(
            &x,
            y,
            coding_objective(&sweep.dictionary, &patches.vectors, Some(&graph), &params, &update.codes)?,
        );
        let mut accepted = terms.total() <= state.terms.total();
        let (dictionary, mut codes, delta) = if accepted {
            (sweep.dictionary, update.codes, update.delta)
        } else {
            // keep the old dictionary; a code stage from the old codes
            // cannot raise the objective
            let retry = update_codes(&state.dictionary, &patches, Some(&graph), &params, &state.codes)
                .map_err(|e| e.context(stage("code stage")))?;
            terms = combine(
                &x,
                y,
                coding_objective(&state.dictionary, &patches.vectors, Some(&graph), &params, &retry.codes)?,
            );
            if terms.total() > state.terms.total() {
                terms = state.terms;
                (state.dictionary.clone(), state.codes.clone(), 0.0)
            } else {
                (state.dictionary.clone(), retry.codes, retry.delta)
            }
        };

        if cfg.image_update == ImageUpdate::EveryIteration {
            x = aggregate_image(y, &patches, &estimates(&dictionary, &codes.codes, &patches), cfg.mu)?;
            patches = extract_patches(&x, cfg.patch_side, cfg.patch_stride)?;
            codes.adaptors = locality_adaptors(&patches.vectors, &dictionary, cfg.delta)?;
            terms = combine(&x, y, coding_objective(&dictionary, &patches.vectors, Some(&graph), &params, &codes)?);
            accepted = true;
        }

        let prev = state.terms.total();
        let now = terms.total();
        records.push(IterationRecord {
            iteration: iter,
            terms,
            code_delta: delta,
            millis: clock.elapsed().as_secs_f64() * 1e3,
            dictionary_accepted: accepted,
            replaced_atoms: if accepted { sweep.replaced.len() } else { 0 },
            unnormalized: codes.unnormalized_count(),
        });
        debug!("tile {origin:?} iteration {iter}: objective {now:.6e}");
        state = State {
            dictionary,
            codes,
            terms,
        };
        let rel = (prev - now).abs() / prev.abs().max(f64::MIN_POSITIVE);
        if rel < cfg.stop_rel_tol {
            stop = StopReason::Converged;
            break;
        }
    }

    let image = if cfg.image_update == ImageUpdate::EveryIteration {
        x
    } else {
        aggregate_image(y, &patches, &estimates(&state.dictionary, &state.codes.codes, &patches), cfg.mu)?
    };
    let trace = TileTrace {
        origin,
        width: y.width(),
        height: y.height(),
        nodes: graph.len(),
        node_stride,
        lrr_iterations: graph.lrr_iterations,
        sinkhorn_iterations: graph.sinkhorn_iterations,
        graph_builds: 1,
        stop,
        records,
    };
    info!(
        "tile {origin:?} finished after {} iterations ({})",
        trace.iterations(),
        stop.as_str()
    );
    Ok(TileResult {
        image,
        trace,
        graph,
        dictionary: state.dictionary,
        codes: state.codes.codes,
    })
}
