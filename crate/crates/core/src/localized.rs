//! Localized denoising: the matrix is tiled by row and column partitions and
//! each tile is estimated by the spectral denoiser optimal for the loss
//! restricted to that tile. All tiles share one SVD of the observation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::denoise::{amse_estimate, optimal_b, Decomposition, DenoiseOptions};
use crate::error::{invalid, mismatch, Result};
use crate::geometry::{WeightOperator, WeightedGeometry};
use crate::spiked::SpikeParams;

/// A cover of `0..dim` by disjoint, nonempty, sorted index blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    dim: usize,
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(dim: usize, mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; dim];
        for (b, block) in blocks.iter_mut().enumerate() {
            if block.is_empty() {
                return Err(invalid(format!("block {b} is empty")));
            }
            block.sort_unstable();
            for &i in block.iter() {
                if i >= dim {
                    return Err(invalid(format!("index {i} in block {b} exceeds dimension {dim}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(invalid(format!("index {i} appears in more than one block")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(invalid(format!("index {missing} is not covered by any block")));
        }
        Ok(Self { dim, blocks })
    }

    /// Parses a JSON array of index arrays covering `0..dim`.
    pub fn from_json(text: &str, dim: usize) -> Result<Self> {
        let blocks: Vec<Vec<usize>> =
            serde_json::from_str(text).map_err(|e| invalid(format!("partition JSON: {e}")))?;
        Self::new(dim, blocks)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.blocks).expect("index lists serialize")
    }

    pub fn single(dim: usize) -> Result<Self> {
        make_equispaced_partition(dim, 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Coordinate projection onto block `i`.
    pub fn projection(&self, i: usize) -> WeightOperator {
        WeightOperator::selection(self.dim, self.blocks[i].clone())
            .expect("partition blocks are valid selections")
    }
}

/// Contiguous blocks whose sizes differ by at most one, larger blocks first.
pub fn make_equispaced_partition(dim: usize, num_blocks: usize) -> Result<Partition> {
    if num_blocks == 0 || num_blocks > dim {
        return Err(invalid(format!(
            "number of blocks must be in 1..={dim}, got {num_blocks}"
        )));
    }
    let base = dim / num_blocks;
    let extra = dim % num_blocks;
    let mut start = 0;
    let blocks = (0..num_blocks)
        .map(|b| {
            let len = base + usize::from(b < extra);
            let block: Vec<usize> = (start..start + len).collect();
            start += len;
            block
        })
        .collect();
    Ok(Partition { dim, blocks })
}

#[derive(Debug, Clone)]
pub struct TileResult {
    pub row_block: usize,
    pub col_block: usize,
    pub b_hat: DMatrix<f64>,
    pub amse_estimate: f64,
    pub geometry: WeightedGeometry,
}

#[derive(Debug, Clone)]
pub struct LocalizedResult {
    pub x_hat: DMatrix<f64>,
    /// Sum of the per-tile AMSE estimates.
    pub amse_estimate: f64,
    pub spikes: SpikeParams,
    /// Tiles in row-major order of (row block, column block).
    pub tiles: Vec<TileResult>,
}

fn check_partitions(decomp: &Decomposition, rows: &Partition, cols: &Partition) -> Result<()> {
    let (p, n) = decomp.shape;
    if rows.dim() != p || cols.dim() != n {
        return Err(mismatch(format!(
            "partitions cover {}x{} but the observation is {p}x{n}",
            rows.dim(),
            cols.dim()
        )));
    }
    Ok(())
}

/// Localized denoising for a precomputed decomposition.
pub fn localized_denoise_with(
    decomp: &Decomposition,
    rows: &Partition,
    cols: &Partition,
) -> Result<LocalizedResult> {
    check_partitions(decomp, rows, cols)?;
    let pairs: Vec<(usize, usize)> = (0..rows.len())
        .flat_map(|i| (0..cols.len()).map(move |j| (i, j)))
        .collect();
    let tiles: Vec<(TileResult, DMatrix<f64>)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let geometry = decomp.geometry(&rows.projection(i), &cols.projection(j))?;
            let b_hat = optimal_b(&geometry);
            let (amse, _) = amse_estimate(&geometry);
            let block = decomp.reconstruct_block(&b_hat, &rows.blocks()[i], &cols.blocks()[j]);
            Ok((
                TileResult {
                    row_block: i,
                    col_block: j,
                    b_hat,
                    amse_estimate: amse,
                    geometry,
                },
                block,
            ))
        })
        .collect::<Result<_>>()?;

    let (p, n) = decomp.shape;
    let mut x_hat = DMatrix::zeros(p, n);
    let mut total = 0.0;
    let mut out = Vec::with_capacity(tiles.len());
    for (tile, block) in tiles {
        let rb = &rows.blocks()[tile.row_block];
        let cb = &cols.blocks()[tile.col_block];
        for (c, &col) in cb.iter().enumerate() {
            for (a, &row) in rb.iter().enumerate() {
                x_hat[(row, col)] = block[(a, c)];
            }
        }
        total += tile.amse_estimate;
        out.push(tile);
    }
    Ok(LocalizedResult {
        x_hat,
        amse_estimate: total,
        spikes: decomp.spikes.clone(),
        tiles: out,
    })
}

/// Algorithm for tiled denoising under unweighted loss: one shared SVD, the
/// globally detected rank, and a separately optimal `B` for every tile.
pub fn localized_denoise(
    y: &DMatrix<f64>,
    rows: &Partition,
    cols: &Partition,
    opts: &DenoiseOptions,
) -> Result<LocalizedResult> {
    if rows.dim() != y.nrows() || cols.dim() != y.ncols() {
        return Err(mismatch(format!(
            "partitions cover {}x{} but the observation is {}x{}",
            rows.dim(),
            cols.dim(),
            y.nrows(),
            y.ncols()
        )));
    }
    let decomp = Decomposition::compute(y, opts)?;
    localized_denoise_with(&decomp, rows, cols)
}
