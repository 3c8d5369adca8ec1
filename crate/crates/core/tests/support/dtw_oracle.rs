//! Exhaustive DTW by enumerating every monotonic path.

use splitlm::numerics::Matrix;

/// Steps ranked by tie preference: diagonal, then down, then right.
const STEPS: [(usize, usize); 3] = [(1, 1), (1, 0), (0, 1)];

/// Path cells and the step ranks read from the end of the path.
type RankedPath = (Vec<(usize, usize)>, Vec<usize>);

/// Every monotonic path of one shape, with its tie-breaking key.
pub struct PathTable {
    shape: (usize, usize),
    paths: Vec<RankedPath>,
}

fn walk(shape: (usize, usize), path: &mut Vec<(usize, usize)>, ranks: &mut Vec<usize>, out: &mut Vec<RankedPath>) {
    let (rows, cols) = shape;
    let at = *path.last().unwrap();
    if at == (rows - 1, cols - 1) {
        // Reversed steps: the DP picks predecessors walking back from the end.
        out.push((path.clone(), ranks.iter().rev().copied().collect()));
        return;
    }
    for (rank, (du, dv)) in STEPS.iter().enumerate() {
        let next = (at.0 + du, at.1 + dv);
        if next.0 < rows && next.1 < cols {
            path.push(next);
            ranks.push(rank);
            walk(shape, path, ranks, out);
            path.pop();
            ranks.pop();
        }
    }
}

impl PathTable {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut paths = Vec::new();
        walk((rows, cols), &mut vec![(0, 0)], &mut Vec::new(), &mut paths);
        PathTable {
            shape: (rows, cols),
            paths,
        }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    /// Maximum path sum, and among maximal paths the one whose steps read
    /// from the end are lexicographically most preferred. Returns
    /// (path, sum, mean).
    pub fn best(&self, m: &Matrix<f64>) -> (&[(usize, usize)], f64, f64) {
        assert_eq!(m.shape(), self.shape);
        let mut best: Option<(f64, usize)> = None;
        for (k, (cells, key)) in self.paths.iter().enumerate() {
            let sum: f64 = cells.iter().map(|&(u, v)| m.get(u, v)).sum();
            best = match best {
                Some((s, b)) if s > sum || (s == sum && self.paths[b].1 <= *key) => Some((s, b)),
                _ => Some((sum, k)),
            };
        }
        let (sum, b) = best.unwrap();
        let path = &self.paths[b].0;
        (path, sum, sum / path.len() as f64)
    }
}

pub fn brute_force_dtw(m: &Matrix<f64>) -> (Vec<(usize, usize)>, f64, f64) {
    let (rows, cols) = m.shape();
    let table = PathTable::new(rows, cols);
    let (path, sum, mean) = table.best(m);
    (path.to_vec(), sum, mean)
}

/// Every matrix of the given shape with entries from `grid`, in odometer order.
pub fn all_matrices(rows: usize, cols: usize, grid: &[f64]) -> impl Iterator<Item = Matrix<f64>> + '_ {
    let cells = rows * cols;
    let total = grid.len().pow(cells as u32);
    (0..total).map(move |mut code| {
        let mut data = Vec::with_capacity(cells);
        for _ in 0..cells {
            data.push(grid[code % grid.len()]);
            code /= grid.len();
        }
        Matrix::from_vec(rows, cols, data).unwrap()
    })
}

/// Every matrix of one shape over an evenly spaced grid, in odometer order,
/// with every path's sum kept current as single entries change. Path sums are
/// tracked as integer grid steps, so the maximum is found exactly.
pub struct GridSweep {
    shape: (usize, usize),
    grid: Vec<f64>,
    /// Paths ordered from most to least preferred on ties.
    paths: Vec<Vec<(usize, usize)>>,
    /// Cells from fastest to slowest odometer digit. Cells on every path come
    /// first: changing one shifts all sums alike and leaves the winner alone.
    order: Vec<usize>,
    /// For each digit, the paths through its cell, or None if that is all.
    through: Vec<Option<Vec<usize>>>,
}

impl GridSweep {
    pub fn new(rows: usize, cols: usize, grid: &[f64]) -> Self {
        assert!(grid.len() >= 2);
        let step = grid[1] - grid[0];
        assert!(grid.windows(2).all(|w| w[1] - w[0] == step && step > 0.0));
        let mut ranked = PathTable::new(rows, cols).paths;
        ranked.sort_by(|a, b| a.1.cmp(&b.1));
        let paths: Vec<_> = ranked.into_iter().map(|(cells, _)| cells).collect();
        let mut on = vec![Vec::new(); rows * cols];
        for (k, cells) in paths.iter().enumerate() {
            for &(u, v) in cells {
                on[u * cols + v].push(k);
            }
        }
        let mut order: Vec<usize> = (0..rows * cols).collect();
        order.sort_by_key(|&c| on[c].len() != paths.len());
        let through = order
            .iter()
            .map(|&c| (on[c].len() != paths.len()).then(|| on[c].clone()))
            .collect();
        GridSweep {
            shape: (rows, cols),
            grid: grid.to_vec(),
            paths,
            order,
            through,
        }
    }

    pub fn count(&self) -> u64 {
        (self.grid.len() as u64).pow((self.shape.0 * self.shape.1) as u32)
    }

    /// Calls `f` with each matrix and its best path, the path's sum and mean.
    /// The sum is taken along the path in order, as a DP would accumulate it.
    pub fn for_each(&self, mut f: impl FnMut(&Matrix<f64>, &[(usize, usize)], f64, f64)) {
        let (rows, cols) = self.shape;
        let top = self.grid.len() - 1;
        let mut m = Matrix::filled(rows, cols, self.grid[0]);
        let mut digits = vec![0usize; self.order.len()];
        let mut steps = vec![0i32; self.paths.len()];
        let mut stale = true;
        let mut winner = 0;
        loop {
            if stale {
                winner = 0;
                for (k, &s) in steps.iter().enumerate() {
                    if s > steps[winner] {
                        winner = k;
                    }
                }
                stale = false;
            }
            let best = &self.paths[winner];
            let sum: f64 = best.iter().map(|&(u, v)| m.get(u, v)).sum();
            f(&m, best, sum, sum / best.len() as f64);

            let mut digit = 0;
            loop {
                if digit == digits.len() {
                    return;
                }
                let delta = if digits[digit] == top {
                    digits[digit] = 0;
                    -(top as i32)
                } else {
                    digits[digit] += 1;
                    1
                };
                let cell = self.order[digit];
                m.set(cell / cols, cell % cols, self.grid[digits[digit]]);
                if let Some(through) = &self.through[digit] {
                    for &k in through {
                        steps[k] += delta;
                    }
                    stale = true;
                }
                if delta > 0 {
                    break;
                }
                digit += 1;
            }
        }
    }
}
