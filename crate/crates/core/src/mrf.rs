//! Stage 1: crude-sketch generation.
//!
//! Every grid node of the test photo retrieves candidate photo/sketch patch
//! pairs from the training set. A grid MRF couples the choices: the unary
//! term is photo-patch dissimilarity, the pairwise term penalizes sketch
//! disagreement in the shared overlap strip. Min-sum loopy belief
//! propagation picks a labeling; an exhaustive minimizer doubles as the
//! oracle for small instances. The selected sketch patches are averaged
//! into the crude sketch.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::patching::{assemble_average, GridSpec, Patch};

/// A pixel-aligned photo/sketch pair from the training set.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub photo: GrayImage,
    pub sketch: GrayImage,
}

impl TrainingPair {
    pub fn new(photo: GrayImage, sketch: GrayImage) -> Result<Self> {
        if !photo.same_dims(&sketch) {
            return Err(Error::DimensionMismatch(format!(
                "photo {}x{} vs sketch {}x{}",
                photo.height(),
                photo.width(),
                sketch.height(),
                sketch.width()
            )));
        }
        Ok(Self { photo, sketch })
    }
}

/// One candidate label for a grid node.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub photo_patch: Vec<f64>,
    pub sketch_patch: Vec<f64>,
    /// Squared L2 distance between `photo_patch` and the query photo patch.
    pub data_cost: f64,
}

/// Per-node candidate lists in row-major node order.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub nodes: Vec<Vec<Candidate>>,
    /// Set when some node had fewer than the requested K candidates.
    pub truncated_pool: bool,
}

/// Grid-structured labeling problem.
#[derive(Debug, Clone)]
pub struct MrfModel {
    pub grid: GridSpec,
    /// One candidate list per node, row-major.
    pub candidates: Vec<Vec<Candidate>>,
    /// Smoothness weight applied to the normalized pairwise term.
    pub lambda: f64,
}

/// Outcome of MAP inference.
#[derive(Debug, Clone, PartialEq)]
pub struct MapAssignment {
    /// Selected candidate index per node, row-major.
    pub labels: Vec<usize>,
    pub energy: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn ssd(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Gather the K best candidates per node from all training pairs.
///
/// For the node anchored at pixel (t, l) the pool holds every training patch
/// whose up-left corner is within Chebyshev distance `search_radius` of
/// (t, l), clipped to image bounds. Candidates are ranked by squared L2
/// photo distance; ties resolve by (pair, row, col) order.
pub fn build_candidates(
    photo: &GrayImage,
    grid: &GridSpec,
    training: &[TrainingPair],
    k: usize,
    search_radius: usize,
) -> Result<CandidateSet> {
    if training.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    for (i, pair) in training.iter().enumerate() {
        if pair.photo.height() < photo.height() || pair.photo.width() < photo.width() {
            return Err(Error::DimensionMismatch(format!(
                "training pair {i} is {}x{}, smaller than the {}x{} photo",
                pair.photo.height(),
                pair.photo.width(),
                photo.height(),
                photo.width()
            )));
        }
    }
    let patch = grid.patch;
    let radius = search_radius as isize;

    let nodes: Vec<Vec<Candidate>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let (row, col) = (idx / grid.cols, idx % grid.cols);
            let (t, l) = grid.origin_of(row, col);
            let query = photo.block(t, l, patch, patch);
            let query = query.pixels();
            let mut pool: Vec<Candidate> = Vec::new();
            for pair in training {
                let max_y = pair.photo.height() - patch;
                let max_x = pair.photo.width() - patch;
                let y0 = (t as isize - radius).max(0) as usize;
                let y1 = (t as isize + radius).min(max_y as isize) as usize;
                let x0 = (l as isize - radius).max(0) as usize;
                let x1 = (l as isize + radius).min(max_x as isize) as usize;
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let pp = pair.photo.block(y, x, patch, patch);
                        let sp = pair.sketch.block(y, x, patch, patch);
                        pool.push(Candidate {
                            data_cost: ssd(pp.pixels(), query),
                            photo_patch: pp.pixels().to_vec(),
                            sketch_patch: sp.pixels().to_vec(),
                        });
                    }
                }
            }
            // stable sort keeps (pair, row, col) order among equal costs
            pool.sort_by(|a, b| a.data_cost.total_cmp(&b.data_cost));
            pool.truncate(k);
            pool
        })
        .collect();

    let truncated_pool = nodes.iter().any(|n| n.len() < k);
    Ok(CandidateSet {
        nodes,
        truncated_pool,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Horizontal,
    Vertical,
}

/// Squared L2 distance between two candidates' sketch patches over the
/// overlap strip they share: the last `overlap` columns of the left patch
/// against the first `overlap` columns of the right one (horizontal), or the
/// bottom rows against the top rows (vertical).
pub fn smoothness_cost(a: &Candidate, b: &Candidate, direction: Direction, grid: &GridSpec) -> f64 {
    let (patch, ov) = (grid.patch, grid.overlap);
    let mut acc = 0.0;
    match direction {
        Direction::Horizontal => {
            for y in 0..patch {
                for x in 0..ov {
                    let va = a.sketch_patch[y * patch + (grid.stride + x)];
                    let vb = b.sketch_patch[y * patch + x];
                    let d = va - vb;
                    acc += d * d;
                }
            }
        }
        Direction::Vertical => {
            for y in 0..ov {
                for x in 0..patch {
                    let va = a.sketch_patch[(grid.stride + y) * patch + x];
                    let vb = b.sketch_patch[y * patch + x];
                    let d = va - vb;
                    acc += d * d;
                }
            }
        }
    }
    acc
}

// Normalized cost tables: unary = data_cost / patch^2, pairwise =
// lambda * smoothness / (overlap * patch). Both terms become scale-free,
// so lambda = 1 weighs them evenly.
struct CostTables {
    unary: Vec<Vec<f64>>,
    /// For each undirected edge (a_node, b_node): row-major K_a x K_b table.
    edges: Vec<(usize, usize, Vec<f64>)>,
}

fn build_tables(model: &MrfModel) -> CostTables {
    let grid = &model.grid;
    let unary_norm = (grid.patch * grid.patch) as f64;
    let pair_norm = (grid.overlap * grid.patch) as f64;
    let unary: Vec<Vec<f64>> = model
        .candidates
        .iter()
        .map(|c| c.iter().map(|cand| cand.data_cost / unary_norm).collect())
        .collect();

    let mut edges = Vec::new();
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let a = row * grid.cols + col;
            if col + 1 < grid.cols {
                let b = a + 1;
                edges.push((a, b, Direction::Horizontal));
            }
            if row + 1 < grid.rows {
                let b = a + grid.cols;
                edges.push((a, b, Direction::Vertical));
            }
        }
    }
    let edges = edges
        .into_par_iter()
        .map(|(a, b, dir)| {
            let ca = &model.candidates[a];
            let cb = &model.candidates[b];
            let mut table = vec![0.0; ca.len() * cb.len()];
            for (i, x) in ca.iter().enumerate() {
                for (j, y) in cb.iter().enumerate() {
                    table[i * cb.len() + j] =
                        model.lambda * smoothness_cost(x, y, dir, grid) / pair_norm;
                }
            }
            (a, b, table)
        })
        .collect();
    CostTables { unary, edges }
}

/// Total energy of a labeling under the normalized model.
pub fn energy(model: &MrfModel, labels: &[usize]) -> f64 {
    let tables = build_tables(model);
    energy_with_tables(&tables, labels)
}

fn energy_with_tables(tables: &CostTables, labels: &[usize]) -> f64 {
    let mut e = 0.0;
    for (node, &l) in labels.iter().enumerate() {
        e += tables.unary[node][l];
    }
    for (a, b, table) in &tables.edges {
        let kb = tables.unary[*b].len();
        e += table[labels[*a] * kb + labels[*b]];
    }
    e
}

fn validate_model(model: &MrfModel) -> Result<()> {
    if model.candidates.len() != model.grid.len() {
        return Err(Error::InvalidGrid(format!(
            "{} candidate lists for {} grid nodes",
            model.candidates.len(),
            model.grid.len()
        )));
    }
    if model.candidates.iter().any(|c| c.is_empty()) {
        return Err(Error::InvalidParameter(
            "every node needs at least one candidate".into(),
        ));
    }
    if model.lambda < 0.0 {
        return Err(Error::InvalidParameter("lambda must be >= 0".into()));
    }
    Ok(())
}

const BP_CONVERGENCE_TOL: f64 = 1e-6;

/// Min-sum loopy belief propagation.
///
/// Messages start at zero and are updated synchronously with damping
/// (`new = damping * old + (1 - damping) * computed`), each normalized by
/// subtracting its minimum. Runs until the largest message change falls
/// below 1e-6 or `max_iters` passes. The returned labeling is the best
/// energy seen across iterations, never worse than the pure data-cost
/// argmin; `converged` reports whether messages settled.
pub fn bp_map(model: &MrfModel, max_iters: usize, damping: f64) -> Result<MapAssignment> {
    validate_model(model)?;
    if !(0.0..1.0).contains(&damping) {
        return Err(Error::InvalidParameter(format!(
            "damping {damping} outside [0,1)"
        )));
    }
    let tables = build_tables(model);
    let n = model.candidates.len();
    let k = |node: usize| tables.unary[node].len();

    // directed messages, one per (edge, direction)
    struct DirectedEdge {
        from: usize,
        to: usize,
        /// row-major table indexed [label_from][label_to]
        table_idx: usize,
        transposed: bool,
    }
    let mut directed = Vec::with_capacity(tables.edges.len() * 2);
    for (idx, (a, b, _)) in tables.edges.iter().enumerate() {
        directed.push(DirectedEdge {
            from: *a,
            to: *b,
            table_idx: idx,
            transposed: false,
        });
        directed.push(DirectedEdge {
            from: *b,
            to: *a,
            table_idx: idx,
            transposed: true,
        });
    }
    // incoming directed-edge ids per node
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (id, e) in directed.iter().enumerate() {
        incoming[e.to].push(id);
    }
    let mut messages: Vec<Vec<f64>> = directed.iter().map(|e| vec![0.0; k(e.to)]).collect();

    let beliefs_to_labels = |messages: &[Vec<f64>]| -> Vec<usize> {
        (0..n)
            .map(|node| {
                let mut best = (0usize, f64::INFINITY);
                for (label, &unary) in tables.unary[node].iter().enumerate() {
                    let mut b = unary;
                    for &id in &incoming[node] {
                        b += messages[id][label];
                    }
                    if b < best.1 {
                        best = (label, b);
                    }
                }
                best.0
            })
            .collect()
    };

    let mut best_labels = beliefs_to_labels(&messages);
    let mut best_energy = energy_with_tables(&tables, &best_labels);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iters {
        iterations = iter + 1;
        let mut max_change = 0.0f64;
        let new_messages: Vec<Vec<f64>> = directed
            .iter()
            .map(|e| {
                let (a, b, table) = &tables.edges[e.table_idx];
                let (ka, kb) = (k(*a), k(*b));
                let mut out = vec![f64::INFINITY; k(e.to)];
                for from_label in 0..k(e.from) {
                    // unary + all incoming messages except the reverse edge
                    let mut base = tables.unary[e.from][from_label];
                    for &id in &incoming[e.from] {
                        if directed[id].from != e.to {
                            base += messages[id][from_label];
                        }
                    }
                    for (to_label, slot) in out.iter_mut().enumerate() {
                        let pair = if e.transposed {
                            debug_assert_eq!(k(e.to), ka);
                            table[to_label * kb + from_label]
                        } else {
                            debug_assert_eq!(k(e.to), kb);
                            table[from_label * kb + to_label]
                        };
                        let v = base + pair;
                        if v < *slot {
                            *slot = v;
                        }
                    }
                }
                out
            })
            .collect();

        for (id, mut new_msg) in new_messages.into_iter().enumerate() {
            for (slot, &old) in new_msg.iter_mut().zip(&messages[id]) {
                *slot = damping * old + (1.0 - damping) * *slot;
            }
            let min = new_msg.iter().copied().fold(f64::INFINITY, f64::min);
            for slot in new_msg.iter_mut() {
                *slot -= min;
            }
            for (new, old) in new_msg.iter().zip(&messages[id]) {
                max_change = max_change.max((new - old).abs());
            }
            messages[id] = new_msg;
        }

        let labels = beliefs_to_labels(&messages);
        let e = energy_with_tables(&tables, &labels);
        if e < best_energy {
            best_energy = e;
            best_labels = labels;
        }
        if max_change < BP_CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }

    // never lose to the decoupled data-cost argmin
    let baseline: Vec<usize> = (0..n)
        .map(|node| {
            let u = &tables.unary[node];
            let mut best = 0;
            for label in 1..u.len() {
                if u[label] < u[best] {
                    best = label;
                }
            }
            best
        })
        .collect();
    let baseline_energy = energy_with_tables(&tables, &baseline);
    if baseline_energy < best_energy {
        best_energy = baseline_energy;
        best_labels = baseline;
    }

    Ok(MapAssignment {
        labels: best_labels,
        energy: best_energy,
        converged,
        iterations,
    })
}

const BRUTE_FORCE_LIMIT: f64 = 1e6;

/// Exhaustive MAP minimizer, the test oracle for [`bp_map`]. Enumerates
/// labelings in lexicographic order (node 0 most significant) and keeps the
/// first strict minimum, i.e. the lexicographically smallest minimizer.
pub fn brute_force_map(model: &MrfModel) -> Result<MapAssignment> {
    validate_model(model)?;
    let sizes: Vec<usize> = model.candidates.iter().map(|c| c.len()).collect();
    let total: f64 = sizes.iter().map(|&s| s as f64).product();
    if total > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!(
            "{total:.0} labelings exceed the brute-force limit"
        )));
    }
    let tables = build_tables(model);
    let n = sizes.len();
    let mut labels = vec![0usize; n];
    let mut best_labels = labels.clone();
    let mut best_energy = energy_with_tables(&tables, &labels);
    loop {
        // odometer increment, least significant digit last
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(MapAssignment {
                    labels: best_labels,
                    energy: best_energy,
                    converged: true,
                    iterations: 0,
                });
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < sizes[pos] {
                break;
            }
            labels[pos] = 0;
        }
        let e = energy_with_tables(&tables, &labels);
        if e < best_energy {
            best_energy = e;
            best_labels = labels.clone();
        }
    }
}

/// Parameters for crude-sketch synthesis.
#[derive(Debug, Clone, Copy)]
pub struct CrudeParams {
    pub patch: usize,
    pub overlap: usize,
    pub k: usize,
    pub search_radius: usize,
    pub lambda: f64,
    pub bp_iters: usize,
    pub damping: f64,
}

impl Default for CrudeParams {
    fn default() -> Self {
        Self {
            patch: 10,
            overlap: 5,
            k: 10,
            search_radius: 5,
            lambda: 1.0,
            bp_iters: 30,
            damping: 0.5,
        }
    }
}

/// Stage-1 pipeline: retrieve candidates, run BP, average the selected
/// sketch patches into the crude sketch.
pub fn synthesize_crude(
    photo: &GrayImage,
    training: &[TrainingPair],
    params: &CrudeParams,
) -> Result<GrayImage> {
    let grid = crate::patching::make_grid(photo.height(), photo.width(), params.patch, params.overlap)?;
    let candidates = build_candidates(photo, &grid, training, params.k, params.search_radius)?;
    let model = MrfModel {
        grid,
        candidates: candidates.nodes,
        lambda: params.lambda,
    };
    let assignment = bp_map(&model, params.bp_iters, params.damping)?;
    let patches: Vec<Patch> = assignment
        .labels
        .iter()
        .enumerate()
        .map(|(idx, &label)| {
            let (row, col) = (idx / grid.cols, idx % grid.cols);
            let (top, left) = grid.origin_of(row, col);
            Patch {
                grid_row: row,
                grid_col: col,
                top,
                left,
                data: model.candidates[idx][label].sketch_patch.clone(),
            }
        })
        .collect();
    assemble_average(&patches, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::rmse;
    use crate::patching::make_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(h, w, (0..h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn random_model(
        rows: usize,
        cols: usize,
        k: usize,
        lambda: f64,
        seed: u64,
    ) -> MrfModel {
        // synthetic candidates with random patches; costs come out random
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = GridSpec {
            patch: 4,
            overlap: 2,
            stride: 2,
            rows,
            cols,
            image_h: (rows - 1) * 2 + 4,
            image_w: (cols - 1) * 2 + 4,
        };
        let candidates = (0..rows * cols)
            .map(|_| {
                (0..k)
                    .map(|_| Candidate {
                        photo_patch: vec![0.0; 16],
                        sketch_patch: (0..16).map(|_| rng.gen::<f64>()).collect(),
                        data_cost: rng.gen::<f64>() * 10.0,
                    })
                    .collect()
            })
            .collect();
        MrfModel {
            grid,
            candidates,
            lambda,
        }
    }

    #[test]
    fn exact_match_retrieval_at_radius_zero() {
        let photo = random_image(20, 20, 1);
        let sketch = random_image(20, 20, 2);
        let pair = TrainingPair::new(photo.clone(), sketch.clone()).unwrap();
        let grid = make_grid(20, 20, 10, 5).unwrap();
        let set = build_candidates(&photo, &grid, &[pair], 1, 0).unwrap();
        assert_eq!(set.nodes.len(), 9);
        for (idx, node) in set.nodes.iter().enumerate() {
            let (row, col) = (idx / 3, idx % 3);
            let (t, l) = grid.origin_of(row, col);
            assert_eq!(node[0].data_cost, 0.0);
            assert_eq!(
                node[0].sketch_patch,
                sketch.block(t, l, 10, 10).pixels().to_vec()
            );
        }
    }

    #[test]
    fn argmin_picks_the_identical_pair() {
        let photo = random_image(20, 20, 3);
        let other = TrainingPair::new(random_image(20, 20, 4), random_image(20, 20, 5)).unwrap();
        let same = TrainingPair::new(photo.clone(), random_image(20, 20, 6)).unwrap();
        let grid = make_grid(20, 20, 10, 5).unwrap();
        let set = build_candidates(&photo, &grid, &[other, same.clone()], 1, 0).unwrap();
        for (idx, node) in set.nodes.iter().enumerate() {
            let (row, col) = (idx / 3, idx % 3);
            let (t, l) = grid.origin_of(row, col);
            assert_eq!(node[0].data_cost, 0.0);
            assert_eq!(
                node[0].sketch_patch,
                same.sketch.block(t, l, 10, 10).pixels().to_vec()
            );
        }
    }

    #[test]
    fn candidate_pool_size_by_enumeration() {
        // interior node with the search ball fully inside bounds
        let photo = random_image(30, 30, 7);
        let training: Vec<TrainingPair> = (0..3)
            .map(|s| {
                TrainingPair::new(random_image(30, 30, 10 + s), random_image(30, 30, 20 + s))
                    .unwrap()
            })
            .collect();
        let grid = make_grid(30, 30, 10, 5).unwrap();
        let set = build_candidates(&photo, &grid, &training, usize::MAX, 2).unwrap();
        assert!(set.truncated_pool);
        // node (2,2) sits at pixel (10,10); corners range over [8,12]^2
        let center = set.nodes[2 * grid.cols + 2].len();
        assert_eq!(center, 3 * 25);
        // corner node (0,0): offsets clip to [0,2]^2
        assert_eq!(set.nodes[0].len(), 3 * 9);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let photo = random_image(20, 20, 0);
        let grid = make_grid(20, 20, 10, 5).unwrap();
        assert!(matches!(
            build_candidates(&photo, &grid, &[], 1, 0),
            Err(Error::EmptyTrainingSet)
        ));
    }

    fn candidate_with_sketch(sketch_patch: Vec<f64>) -> Candidate {
        Candidate {
            photo_patch: vec![0.0; sketch_patch.len()],
            sketch_patch,
            data_cost: 0.0,
        }
    }

    #[test]
    fn smoothness_of_identical_constant_patches_is_zero() {
        let grid = make_grid(20, 20, 10, 5).unwrap();
        let a = candidate_with_sketch(vec![0.37; 100]);
        assert_eq!(
            smoothness_cost(&a, &a, Direction::Horizontal, &grid),
            0.0
        );
        assert_eq!(smoothness_cost(&a, &a, Direction::Vertical, &grid), 0.0);
    }

    #[test]
    fn smoothness_is_zero_for_candidates_cut_from_one_image() {
        // patches taken stride apart in the same sketch agree on the shared
        // strip, which is exactly what the pairwise term measures
        let grid = make_grid(20, 20, 10, 5).unwrap();
        let img = random_image(20, 20, 9);
        let take = |t: usize, l: usize| candidate_with_sketch(img.block(t, l, 10, 10).pixels().to_vec());
        let a = take(0, 0);
        let right = take(0, grid.stride);
        let below = take(grid.stride, 0);
        assert_eq!(smoothness_cost(&a, &right, Direction::Horizontal, &grid), 0.0);
        assert_eq!(smoothness_cost(&a, &below, Direction::Vertical, &grid), 0.0);
        // patches from unrelated positions do not
        let far = take(5, 7);
        assert!(smoothness_cost(&a, &far, Direction::Horizontal, &grid) > 0.0);
    }

    #[test]
    fn smoothness_counts_overlap_pixels() {
        // overlap 5, patch 10: strip has 50 pixels, each differing by 1
        let grid = make_grid(20, 20, 10, 5).unwrap();
        let zeros = candidate_with_sketch(vec![0.0; 100]);
        let ones = candidate_with_sketch(vec![1.0; 100]);
        assert_eq!(
            smoothness_cost(&zeros, &ones, Direction::Horizontal, &grid),
            50.0
        );
        assert_eq!(
            smoothness_cost(&zeros, &ones, Direction::Vertical, &grid),
            50.0
        );
    }

    #[test]
    fn smoothness_pairs_the_same_pixels_both_ways() {
        // the strip comparison squares differences, so exchanging the two
        // patches' contents while keeping their roles leaves the cost alone
        let grid = make_grid(20, 20, 10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..100).map(|_| rng.gen()).collect();
        let b: Vec<f64> = (0..100).map(|_| rng.gen()).collect();
        for dir in [Direction::Horizontal, Direction::Vertical] {
            let mut swapped_a = a.clone();
            let mut swapped_b = b.clone();
            match dir {
                Direction::Horizontal => {
                    for y in 0..10 {
                        for x in 0..5 {
                            swapped_a[y * 10 + 5 + x] = b[y * 10 + x];
                            swapped_b[y * 10 + x] = a[y * 10 + 5 + x];
                        }
                    }
                }
                Direction::Vertical => {
                    for y in 0..5 {
                        for x in 0..10 {
                            swapped_a[(5 + y) * 10 + x] = b[y * 10 + x];
                            swapped_b[y * 10 + x] = a[(5 + y) * 10 + x];
                        }
                    }
                }
            }
            let ab = smoothness_cost(
                &candidate_with_sketch(a.clone()),
                &candidate_with_sketch(b.clone()),
                dir,
                &grid,
            );
            let ba = smoothness_cost(
                &candidate_with_sketch(swapped_a),
                &candidate_with_sketch(swapped_b),
                dir,
                &grid,
            );
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn bp_with_single_candidate_returns_forced_labeling() {
        let model = random_model(2, 3, 1, 1.0, 10);
        let out = bp_map(&model, 30, 0.5).unwrap();
        assert_eq!(out.labels, vec![0; 6]);
    }

    #[test]
    fn bp_with_zero_lambda_is_per_node_argmin() {
        let model = random_model(3, 3, 4, 0.0, 11);
        let out = bp_map(&model, 30, 0.5).unwrap();
        for (node, cands) in model.candidates.iter().enumerate() {
            let mut best = 0;
            for (i, c) in cands.iter().enumerate() {
                if c.data_cost < cands[best].data_cost {
                    best = i;
                }
            }
            assert_eq!(out.labels[node], best);
        }
    }

    #[test]
    fn bp_matches_brute_force_on_2x2() {
        for seed in 0..10 {
            let model = random_model(2, 2, 3, 1.0, 100 + seed);
            let bp = bp_map(&model, 100, 0.0).unwrap();
            let bf = brute_force_map(&model).unwrap();
            assert!(
                (bp.energy - bf.energy).abs() < 1e-9,
                "seed {seed}: bp {} vs brute {}",
                bp.energy,
                bf.energy
            );
        }
    }

    #[test]
    fn brute_force_single_node_is_argmin() {
        let model = random_model(1, 1, 5, 1.0, 42);
        let bf = brute_force_map(&model).unwrap();
        let costs: Vec<f64> = model.candidates[0].iter().map(|c| c.data_cost).collect();
        let mut best = 0;
        for (i, &c) in costs.iter().enumerate() {
            if c < costs[best] {
                best = i;
            }
        }
        assert_eq!(bf.labels, vec![best]);
    }

    #[test]
    fn bp_is_exact_on_chains() {
        for seed in 0..20 {
            let model = random_model(1, 3, 3, 1.0, 200 + seed);
            let bp = bp_map(&model, 100, 0.0).unwrap();
            let bf = brute_force_map(&model).unwrap();
            assert_eq!(bp.energy, bf.energy, "seed {seed}");
            assert_eq!(bp.labels, bf.labels, "seed {seed}");
        }
    }

    #[test]
    fn bp_never_loses_to_data_argmin() {
        for seed in 0..20 {
            let model = random_model(2, 3, 4, 2.0, 300 + seed);
            let bp = bp_map(&model, 50, 0.5).unwrap();
            let baseline: Vec<usize> = model
                .candidates
                .iter()
                .map(|cands| {
                    let mut best = 0;
                    for (i, c) in cands.iter().enumerate() {
                        if c.data_cost < cands[best].data_cost {
                            best = i;
                        }
                    }
                    best
                })
                .collect();
            assert!(bp.energy <= energy(&model, &baseline) + 1e-12);
        }
    }

    #[test]
    fn brute_force_guards_against_huge_instances() {
        let model = random_model(5, 5, 4, 1.0, 0);
        // 4^25 >> 1e6
        assert!(matches!(
            brute_force_map(&model),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn bp_is_deterministic() {
        let model = random_model(3, 3, 4, 1.0, 77);
        let a = bp_map(&model, 30, 0.5).unwrap();
        let b = bp_map(&model, 30, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn crude_sketch_of_training_photo_is_its_sketch() {
        let photo = random_image(20, 20, 50);
        let sketch = random_image(20, 20, 51);
        let training = vec![TrainingPair::new(photo.clone(), sketch.clone()).unwrap()];
        let params = CrudeParams {
            k: 1,
            search_radius: 0,
            ..CrudeParams::default()
        };
        let crude = synthesize_crude(&photo, &training, &params).unwrap();
        assert!(rmse(&crude, &sketch).unwrap() < 1e-12);
    }

    #[test]
    fn crude_sketch_of_constant_pair_is_constant() {
        let photo = GrayImage::constant(20, 20, 0.3);
        let sketch = GrayImage::constant(20, 20, 0.8);
        let training = vec![TrainingPair::new(photo.clone(), sketch.clone()).unwrap()];
        let crude = synthesize_crude(&photo, &training, &CrudeParams::default()).unwrap();
        assert!(rmse(&crude, &sketch).unwrap() < 1e-12);
    }
}
