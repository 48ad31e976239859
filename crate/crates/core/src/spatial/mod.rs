//! Neighbourhood features from spatial coordinates: cell-type composition,
//! ligand-receptor interaction potentials and the local expression niche,
//! plus the joint gene / spatial embedding.

use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{knn_query, par, pca_fit, Matrix, PcaModel};

/// Expression, coordinates and labels of one spatial sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialDataset {
    /// Cells x genes, normalized counts.
    pub expression: Matrix,
    /// Cells x 2.
    pub locations: Matrix,
    /// Zero-based cell-type index per cell.
    pub cell_types: Vec<usize>,
    /// `(ligand gene, receptor gene)` column indices.
    pub lr_pairs: Vec<(usize, usize)>,
}

impl SpatialDataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.expression.rows();
        if self.locations.rows() != n || self.cell_types.len() != n {
            return Err(Error::dim(format!(
                "{n} expression rows, {} locations, {} labels",
                self.locations.rows(),
                self.cell_types.len()
            )));
        }
        self.locations.ensure_finite("cell locations")?;
        let g = self.expression.cols();
        if let Some(&(l, r)) = self.lr_pairs.iter().find(|(l, r)| *l >= g || *r >= g) {
            return Err(Error::arg(format!(
                "ligand-receptor pair ({l}, {r}) out of range for {g} genes"
            )));
        }
        Ok(())
    }

    pub fn n_types(&self) -> usize {
        self.cell_types.iter().max().map_or(0, |m| m + 1)
    }
}

/// Hop neighbourhoods of every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGraph {
    /// Sorted neighbourhood of each cell, never containing the cell itself.
    pub neighborhoods: Vec<Vec<usize>>,
    /// Cells with an empty neighbourhood; their features use the cell itself.
    pub isolated: Vec<usize>,
}

impl CellGraph {
    /// Neighbourhood used for features: the hop set, or the cell alone when isolated.
    pub fn feature_set(&self, c: usize) -> Vec<usize> {
        if self.neighborhoods[c].is_empty() {
            vec![c]
        } else {
            self.neighborhoods[c].clone()
        }
    }
}

/// kNN graph on `locations` (edges longer than `max_dist` dropped, made
/// undirected), expanded to all cells within `hops` hops.
pub fn build_cell_graph(
    locations: &Matrix,
    k: usize,
    max_dist: Option<f64>,
    hops: usize,
) -> Result<CellGraph> {
    if k == 0 || hops == 0 {
        return Err(Error::arg("cell graph needs k >= 1 and hops >= 1"));
    }
    let n = locations.rows();
    if n < 2 {
        return Ok(CellGraph {
            neighborhoods: vec![Vec::new(); n],
            isolated: (0..n).collect(),
        });
    }
    let lists = knn_query(locations, k.min(n - 1), max_dist)?;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, l) in lists.iter().enumerate() {
        for &j in l {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let neighborhoods: Vec<Vec<usize>> = par::map_indexed(n, |c| {
        let mut depth = vec![usize::MAX; n];
        depth[c] = 0;
        let mut queue = VecDeque::from([c]);
        let mut out = Vec::new();
        while let Some(u) = queue.pop_front() {
            if depth[u] == hops {
                continue;
            }
            for &v in &adj[u] {
                if depth[v] == usize::MAX {
                    depth[v] = depth[u] + 1;
                    out.push(v);
                    queue.push_back(v);
                }
            }
        }
        out.sort_unstable();
        out
    });
    let isolated = (0..n).filter(|&c| neighborhoods[c].is_empty()).collect();
    Ok(CellGraph {
        neighborhoods,
        isolated,
    })
}

/// Fraction of each of the `m` cell types among `neighbors`.
pub fn celltype_frequencies(
    neighbors: &[usize],
    cell_types: &[usize],
    m: usize,
) -> Result<Vec<f64>> {
    if neighbors.is_empty() {
        return Err(Error::arg("empty neighbourhood"));
    }
    let mut f = vec![0.0; m];
    for &c in neighbors {
        let t = cell_types[c];
        if t >= m {
            return Err(Error::arg(format!(
                "cell type {t} out of range for {m} types"
            )));
        }
        f[t] += 1.0;
    }
    let n = neighbors.len() as f64;
    f.iter_mut().for_each(|v| *v /= n);
    Ok(f)
}

/// Mean over neighbours `c'` of `ligand(c') * receptor(cell)` for each pair.
pub fn lr_potentials(
    expression: &Matrix,
    cell: usize,
    neighbors: &[usize],
    lr_pairs: &[(usize, usize)],
) -> Result<Vec<f64>> {
    if neighbors.is_empty() {
        return Err(Error::arg("empty neighbourhood"));
    }
    let n = neighbors.len() as f64;
    Ok(lr_pairs
        .iter()
        .map(|&(l, r)| {
            let rec = expression[(cell, r)];
            neighbors
                .iter()
                .map(|&c| expression[(c, l)] * rec)
                .sum::<f64>()
                / n
        })
        .collect())
}

/// Mean embedding row over `neighbors`.
pub fn local_niche(embeddings: &Matrix, neighbors: &[usize]) -> Result<Vec<f64>> {
    if neighbors.is_empty() {
        return Err(Error::arg("empty neighbourhood"));
    }
    let mut out = vec![0.0; embeddings.cols()];
    for &c in neighbors {
        out.iter_mut()
            .zip(embeddings.row(c))
            .for_each(|(o, v)| *o += v);
    }
    let n = neighbors.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialConfig {
    pub k: usize,
    pub hops: usize,
    pub max_dist: Option<f64>,
    /// Components of the expression PCA used for the niche block.
    pub expr_pca_dim: usize,
    /// Width of the reduced feature matrix.
    pub output_dim: usize,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        SpatialConfig {
            k: 5,
            hops: 3,
            max_dist: None,
            expr_pca_dim: 10,
            output_dim: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialFeatures {
    /// Cells x `output_dim` reduced features.
    pub s: Matrix,
    /// Raw concatenated blocks before standardization and reduction.
    pub blocks: Matrix,
    pub block_spans: Vec<(String, Range<usize>)>,
    pub pca_model: PcaModel,
    pub isolated: Vec<usize>,
}

impl SpatialFeatures {
    pub fn block(&self, name: &str) -> Option<Range<usize>> {
        self.block_spans
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
    }
}

/// Column-wise z-score; constant columns become zeros.
fn zscore(x: &Matrix) -> Matrix {
    let means = x.column_means();
    let stds = x.column_stds();
    let mut out = x.clone();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            out[(i, j)] = if stds[j] > 1e-12 {
                (x[(i, j)] - means[j]) / stds[j]
            } else {
                0.0
            };
        }
    }
    out
}

/// Cell-type frequency, niche and ligand-receptor blocks, each z-scored,
/// concatenated and reduced by PCA.
pub fn assemble_spatial_features(
    ds: &SpatialDataset,
    cfg: &SpatialConfig,
) -> Result<SpatialFeatures> {
    ds.validate()?;
    let n = ds.expression.rows();
    if n < 2 {
        return Err(Error::arg("spatial features need at least two cells"));
    }
    let graph = build_cell_graph(&ds.locations, cfg.k, cfg.max_dist, cfg.hops)?;
    let m = ds.n_types();
    let pdim = cfg.expr_pca_dim.min(ds.expression.cols()).min(n);
    let expr_pca = pca_fit(&ds.expression, pdim)?;
    let emb = expr_pca.transform(&ds.expression)?;
    let p = ds.lr_pairs.len();

    let rows: Vec<Result<Vec<f64>>> = par::map_indexed(n, |c| {
        let nb = graph.feature_set(c);
        let mut row = celltype_frequencies(&nb, &ds.cell_types, m)?;
        row.extend(local_niche(&emb, &nb)?);
        row.extend(lr_potentials(&ds.expression, c, &nb, &ds.lr_pairs)?);
        Ok(row)
    });
    let width = m + pdim + p;
    let mut data = Vec::with_capacity(n * width);
    for r in rows {
        data.extend(r?);
    }
    let blocks = Matrix::from_vec(n, width, data)?;
    let spans = vec![
        ("celltype_freq".to_string(), 0..m),
        ("niche".to_string(), m..m + pdim),
        ("lr_potential".to_string(), m + pdim..width),
    ];
    if cfg.output_dim == 0 || cfg.output_dim > width {
        return Err(Error::Config(format!(
            "spatial output_dim {} must lie in 1..={width}",
            cfg.output_dim
        )));
    }
    let cols: Vec<usize> = (0..width).collect();
    let mut z = Matrix::zeros(n, width);
    for (_, span) in &spans {
        let block = select_cols(&blocks, &cols[span.clone()]);
        let zb = zscore(&block);
        for i in 0..n {
            z.row_mut(i)[span.clone()].copy_from_slice(zb.row(i));
        }
    }
    let pca_model = pca_fit(&z, cfg.output_dim)?;
    let s = pca_model.transform(&z)?;
    Ok(SpatialFeatures {
        s,
        blocks,
        block_spans: spans,
        pca_model,
        isolated: graph.isolated,
    })
}

fn select_cols(x: &Matrix, cols: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), cols.len());
    for i in 0..x.rows() {
        for (k, &j) in cols.iter().enumerate() {
            out[(i, k)] = x[(i, j)];
        }
    }
    out
}

fn average_std(x: &Matrix) -> f64 {
    let s = x.column_stds();
    if s.is_empty() {
        0.0
    } else {
        s.iter().sum::<f64>() / s.len() as f64
    }
}

/// `[gene | spatial']` where `spatial'` is the centered spatial block scaled
/// so its average column std is `s` times that of the gene block. The gene
/// block passes through untouched.
pub fn joint_embed(gene_latent: &Matrix, spatial_latent: &Matrix, s: f64) -> Result<Matrix> {
    if gene_latent.rows() != spatial_latent.rows() {
        return Err(Error::dim(format!(
            "{} gene rows but {} spatial rows",
            gene_latent.rows(),
            spatial_latent.rows()
        )));
    }
    if !(s >= 0.0) {
        return Err(Error::arg("spatial scale must be nonnegative"));
    }
    let sg = average_std(gene_latent);
    let ss = average_std(spatial_latent);
    let factor = if ss > 1e-12 { s * sg / ss } else { 0.0 };
    let means = spatial_latent.column_means();
    let mut sp = spatial_latent.clone();
    for i in 0..sp.rows() {
        for (j, v) in sp.row_mut(i).iter_mut().enumerate() {
            *v = factor * (*v - means[j]);
        }
    }
    Matrix::hstack(&[gene_latent, &sp])
}
