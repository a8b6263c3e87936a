//! Buffer polytope adjoining the constraint `y <= y_max`.
//!
//! In transformed coordinates `s = (y, y', ..., y^(r-1), rest)` the buffer is
//!
//! ```text
//! lower[k] <= s_k <= upper_k(s)        k = 1..r
//! s_{r+1..n} in P
//! upper(s) = [y_max, beta (y_max - s_1), -beta s_2, ..., -beta s_{r-1}]
//! beta     = ydot_max / (y_max - y_min)
//! ```
//!
//! Each upper bound depends only on the previous coordinate. With consistent
//! lower bounds every vertex puts each coordinate on its lower bound or on its
//! (prefix-dependent) upper bound, which yields `F_{r+2}` head vertices.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Relative tolerance used to merge coincident vertices.
pub const VERTEX_DEDUP_TOL: f64 = 1e-12;

/// Relative slack when testing a candidate vertex against the buffer bounds.
const FEASIBILITY_TOL: f64 = 1e-10;

/// Relative distance below which a coordinate is considered to sit on a bound.
const ROUNDING_TOL: f64 = 1e-12;

/// The polytope bounding the coordinates `s_{r+1..n}` that are not output
/// derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxPolytope {
    /// Axis-aligned box; its vertices are the corner product.
    Box { low: Vec<f64>, high: Vec<f64> },
    /// Explicit vertex list of a general bounded polytope.
    Vertices(Vec<Vec<f64>>),
}

impl AuxPolytope {
    pub fn dim(&self) -> usize {
        match self {
            AuxPolytope::Box { low, .. } => low.len(),
            AuxPolytope::Vertices(v) => v.first().map_or(0, Vec::len),
        }
    }

    pub fn vertices(&self) -> Vec<Vec<f64>> {
        match self {
            AuxPolytope::Box { low, high } => {
                let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(low.len())];
                for (lo, hi) in low.iter().zip(high) {
                    let mut next: Vec<Vec<f64>> = Vec::with_capacity(out.len() * 2);
                    for prefix in &out {
                        for value in [*lo, *hi] {
                            let mut p = prefix.clone();
                            p.push(value);
                            if !next.iter().any(|q| close(q, &p)) {
                                next.push(p);
                            }
                        }
                    }
                    out = next;
                }
                out
            }
            AuxPolytope::Vertices(v) => v.clone(),
        }
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        match self {
            AuxPolytope::Box { low, high } => {
                p.len() == low.len()
                    && p.iter()
                        .zip(low.iter().zip(high))
                        .all(|(x, (lo, hi))| *x >= lo - tol && *x <= hi + tol)
            }
            AuxPolytope::Vertices(v) => crate::hull::in_convex_hull(v, p, tol.max(1e-12)),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            AuxPolytope::Box { low, high } => {
                check_len("aux box high", high.len(), low.len())?;
                if low
                    .iter()
                    .zip(high)
                    .any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite())
                {
                    return Err(Error::InvalidSpec(
                        "aux box needs finite low <= high".into(),
                    ));
                }
            }
            AuxPolytope::Vertices(v) => {
                if v.is_empty() {
                    return Err(Error::InvalidSpec(
                        "aux polytope needs at least one vertex".into(),
                    ));
                }
                let d = v[0].len();
                if v.iter()
                    .any(|p| p.len() != d || p.iter().any(|x| !x.is_finite()))
                {
                    return Err(Error::InvalidSpec(
                        "aux vertices must be finite and share one dimension".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Geometry of the buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferSpec {
    /// Relative degree of the constrained output.
    pub r: usize,
    /// Full state dimension.
    pub n: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub ydot_max: f64,
    /// `[y_min, s2_min, ..., sr_min]`.
    pub lower_bounds: Vec<f64>,
    pub aux: AuxPolytope,
}

/// A vertex of the buffer in transformed coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub s: Vec<f64>,
}

/// One entry of the lower-bound feasibility check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCheck {
    /// 1-based coordinate index `k`.
    pub index: usize,
    /// Condition family: `"s2"`, `"odd"` (k = 2j+1) or `"even"` (k = 2j+2).
    pub family: String,
    pub value: f64,
    /// Exact requirement `lower[k] <= min_s upper_k(s)`, given the previous
    /// coordinates pass.
    pub required_max: f64,
    /// Closed form `-beta^(2j-1) ydot_max` or `beta^(2j) s2_min`, which agrees
    /// with `required_max` when the lower bounds are tight.
    pub closed_form_max: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub checks: Vec<LowerBoundCheck>,
}

impl LowerBoundReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn violations(&self) -> impl Iterator<Item = &LowerBoundCheck> {
        self.checks.iter().filter(|c| !c.ok)
    }
}

impl BufferSpec {
    pub fn new(
        r: usize,
        n: usize,
        y_min: f64,
        y_max: f64,
        ydot_max: f64,
        lower_bounds: Vec<f64>,
        aux: AuxPolytope,
    ) -> Result<Self> {
        let spec = Self {
            r,
            n,
            y_min,
            y_max,
            ydot_max,
            lower_bounds,
            aux,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Buffer with tight lower bounds (`lower = min_s upper(s)`) and the given
    /// auxiliary polytope.
    pub fn tight(
        r: usize,
        y_min: f64,
        y_max: f64,
        ydot_max: f64,
        aux: AuxPolytope,
    ) -> Result<Self> {
        let n = r + aux.dim();
        let lower = tight_lower_bounds(r, y_min, y_max, ydot_max);
        Self::new(r, n, y_min, y_max, ydot_max, lower, aux)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r < 2 {
            return Err(Error::InvalidSpec(format!(
                "relative degree must be >= 2, got {}",
                self.r
            )));
        }
        if self.n < self.r {
            return Err(Error::InvalidSpec(format!(
                "state dimension {} is smaller than relative degree {}",
                self.n, self.r
            )));
        }
        if !(self.y_min.is_finite() && self.y_max.is_finite() && self.ydot_max.is_finite()) {
            return Err(Error::InvalidSpec("buffer bounds must be finite".into()));
        }
        if !(self.y_min < self.y_max) {
            return Err(Error::DegenerateBuffer(format!(
                "y_min {} must be below y_max {}",
                self.y_min, self.y_max
            )));
        }
        if !(self.ydot_max > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "ydot_max must be positive, got {}",
                self.ydot_max
            )));
        }
        check_len("lower bounds", self.lower_bounds.len(), self.r)?;
        if self.lower_bounds[0] != self.y_min {
            return Err(Error::InvalidSpec(
                "lower_bounds[0] must equal y_min".into(),
            ));
        }
        if self.lower_bounds.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("lower bounds must be finite".into()));
        }
        self.aux.validate()?;
        check_len("aux polytope dimension", self.aux.dim(), self.n - self.r)?;
        Ok(())
    }

    /// `beta = ydot_max / (y_max - y_min)`.
    pub fn beta(&self) -> Result<f64> {
        beta(self.y_min, self.y_max, self.ydot_max)
    }

    fn beta_unchecked(&self) -> f64 {
        self.ydot_max / (self.y_max - self.y_min)
    }

    /// `upper(s) = [y_max, beta (y_max - s1), -beta s2, ..., -beta s_{r-1}]`.
    pub fn upper_bound(&self, s: &[f64]) -> Vec<f64> {
        let beta = self.beta_unchecked();
        (1..=self.r)
            .map(|k| self.upper_k(k, s[..k.saturating_sub(1)].last().copied(), beta))
            .collect()
    }

    /// Upper bound of coordinate `k` (1-based) given the previous coordinate.
    fn upper_k(&self, k: usize, prev: Option<f64>, beta: f64) -> f64 {
        match (k, prev) {
            (1, _) => self.y_max,
            (2, Some(s1)) => beta * (self.y_max - s1),
            (_, Some(p)) => -beta * p,
            (_, None) => unreachable!("upper bound of s_{k} needs s_{}", k - 1),
        }
    }

    /// `lower <= s_{1:r} <= upper(s)` and `s_{r+1:n} in P`.
    pub fn contains(&self, s: &[f64]) -> bool {
        self.contains_tol(s, 0.0)
    }

    pub fn contains_tol(&self, s: &[f64], tol: f64) -> bool {
        if s.len() != self.n {
            return false;
        }
        let upper = self.upper_bound(s);
        let head_ok =
            (0..self.r).all(|k| s[k] >= self.lower_bounds[k] - tol && s[k] <= upper[k] + tol);
        head_ok && self.aux.contains(&s[self.r..], tol)
    }

    /// Strict `s_{1:r} < upper(s)`, the entry condition for the safety guarantee.
    ///
    /// Values within rounding distance (`1e-12` relative) of the bound count as
    /// equal, so that e.g. `0.5` is on the bound `10 * (0.2 - 0.15)`.
    pub fn strictly_below_upper(&self, s: &[f64]) -> bool {
        if s.len() < self.r {
            return false;
        }
        let upper = self.upper_bound(s);
        (0..self.r).all(|k| s[k] < upper[k] - ROUNDING_TOL * upper[k].abs().max(1.0))
    }

    /// `s_{1:r} >= lower` and `s_{r+1:n} in P`: the conditions under which the
    /// trajectory is considered to still be inside the buffer.
    pub fn within_lower_and_aux(&self, s: &[f64], tol: f64) -> bool {
        s.len() == self.n
            && (0..self.r).all(|k| s[k] >= self.lower_bounds[k] - tol)
            && self.aux.contains(&s[self.r..], tol)
    }

    /// Checks whether the lower bounds stay below the upper bounds everywhere
    /// in the buffer. Coordinates are checked in order with the exact chain
    /// `s2_min <= 0`, `s3_min <= -beta ydot_max` and
    /// `s_{k+2}_min <= beta^2 s_k_min`; the closed forms are reported alongside.
    pub fn validate_lower_bounds(&self) -> LowerBoundReport {
        let beta = self.beta_unchecked();
        let lo = &self.lower_bounds;
        let tol = |x: f64| 1e-12 * x.abs().max(1.0);
        let mut checks = Vec::new();
        for k in 2..=self.r {
            let value = lo[k - 1];
            let (family, required, closed) = if k == 2 {
                ("s2", 0.0, 0.0)
            } else if k == 3 {
                let b = -beta * self.ydot_max;
                ("odd", b, b)
            } else if k % 2 == 1 {
                let j = (k - 1) / 2;
                (
                    "odd",
                    beta * beta * lo[k - 3],
                    -beta.powi(2 * j as i32 - 1) * self.ydot_max,
                )
            } else {
                let j = (k - 2) / 2;
                (
                    "even",
                    beta * beta * lo[k - 3],
                    beta.powi(2 * j as i32) * lo[1],
                )
            };
            checks.push(LowerBoundCheck {
                index: k,
                family: family.into(),
                value,
                required_max: required,
                closed_form_max: closed,
                ok: value <= required + tol(required),
            });
        }
        LowerBoundReport { checks }
    }

    /// Exact vertex set of the `s_{1:r}` part of the buffer.
    ///
    /// Every upper bound links `s_k` to `s_{k-1}` only, so the active
    /// constraints of a vertex split `1..r` into runs of consecutive
    /// coordinates joined by active upper bounds. Each run is pinned by one
    /// lower bound (or by `s_1 = y_max` when it starts at `s_1`), which
    /// determines the whole run. Enumerating every run layout and pin and
    /// keeping the feasible points gives all vertices. With lower bounds that
    /// pass [`validate_lower_bounds`](Self::validate_lower_bounds) the result is
    /// the min/max tree of [`bound_tree`](Self::bound_tree); otherwise lower
    /// bounds cut into the upper ones and move some vertices inward.
    pub fn head_vertices(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let beta = self.beta()?;
        let r = self.r;
        let mut out: Vec<Vec<f64>> = Vec::new();
        let mut point = vec![0.0; r];
        self.pinned_runs(0, beta, &mut point, &mut out);
        if out.is_empty() {
            return Err(Error::DegenerateBuffer(format!(
                "lower bounds {:?} leave the buffer empty",
                self.lower_bounds
            )));
        }
        Ok(out)
    }

    /// Fills runs starting at 0-based coordinate `start` and recurses.
    fn pinned_runs(&self, start: usize, beta: f64, point: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        let r = self.r;
        if start == r {
            if self.head_feasible(point) && !out.iter().any(|q| close(q, point)) {
                out.push(point.clone());
            }
            return;
        }
        for end in start..r {
            // pin index `None` is `s_1 = y_max`, only available to the first run
            let pins = (start..=end).map(Some).chain((start == 0).then_some(None));
            for pin in pins {
                let (j, value) = match pin {
                    Some(j) => (j, self.lower_bounds[j]),
                    None => (0, self.y_max),
                };
                point[j] = value;
                for k in j + 1..=end {
                    point[k] = self.upper_k(k + 1, Some(point[k - 1]), beta);
                }
                for k in (start..j).rev() {
                    // invert `s_{k+1} = upper_{k+1}(s_k)`
                    point[k] = if k == 0 {
                        self.y_max - point[1] / beta
                    } else {
                        -point[k + 1] / beta
                    };
                }
                self.pinned_runs(end + 1, beta, point, out);
            }
        }
    }

    fn head_feasible(&self, s: &[f64]) -> bool {
        let beta = self.beta_unchecked();
        (0..self.r).all(|k| {
            let lo = self.lower_bounds[k];
            let up = self.upper_k(k + 1, k.checked_sub(1).map(|i| s[i]), beta);
            let tol = FEASIBILITY_TOL * lo.abs().max(up.abs()).max(1.0);
            s[k] >= lo - tol && s[k] <= up + tol
        })
    }

    /// All vertices of the buffer: the head vertices times the vertices of `P`.
    pub fn enumerate_vertices(&self) -> Result<Vec<Vertex>> {
        let head = self.head_vertices()?;
        let aux = self.aux.vertices();
        let mut out: Vec<Vertex> = Vec::with_capacity(head.len() * aux.len());
        for h in &head {
            for a in &aux {
                let mut s = h.clone();
                s.extend_from_slice(a);
                if !out.iter().any(|v| close(&v.s, &s)) {
                    out.push(Vertex { s });
                }
            }
        }
        Ok(out)
    }

    /// Every leaf of the min/max tree over `s_{1:r}` without feasibility
    /// pruning: coordinate `k` takes `lower[k]` or `upper_k(prefix)`. This is
    /// the vertex set whenever the lower bounds are feasible; otherwise some
    /// leaves fall outside the buffer.
    pub fn bound_tree(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let beta = self.beta()?;
        let mut level: Vec<Vec<f64>> = vec![Vec::new()];
        for k in 1..=self.r {
            let lo = self.lower_bounds[k - 1];
            let mut next = Vec::with_capacity(level.len() * 2);
            for prefix in &level {
                let hi = self.upper_k(k, prefix.last().copied(), beta);
                for value in [lo, hi] {
                    let mut p = prefix.clone();
                    p.push(value);
                    if !next.iter().any(|q: &Vec<f64>| close(q, &p)) {
                        next.push(p);
                    }
                }
            }
            level = next;
        }
        Ok(level)
    }

    /// Whether the lower bounds equal `min_s upper(s)`.
    pub fn has_tight_lower_bounds(&self) -> bool {
        let tight = tight_lower_bounds(self.r, self.y_min, self.y_max, self.ydot_max);
        tight
            .iter()
            .zip(&self.lower_bounds)
            .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0))
    }
}

/// `beta = ydot_max / (y_max - y_min)`.
pub fn beta(y_min: f64, y_max: f64, ydot_max: f64) -> Result<f64> {
    let width = y_max - y_min;
    if width == 0.0 || !width.is_finite() {
        return Err(Error::DegenerateBuffer(format!(
            "y_max ({y_max}) and y_min ({y_min}) do not span an interval"
        )));
    }
    Ok(ydot_max / width)
}

/// Lower bounds equal to `min_s upper(s)`: `[y_min, 0, -beta ydot_max, 0,
/// -beta^3 ydot_max, ...]`.
pub fn tight_lower_bounds(r: usize, y_min: f64, y_max: f64, ydot_max: f64) -> Vec<f64> {
    let b = ydot_max / (y_max - y_min);
    let mut lo = vec![y_min];
    for k in 2..=r {
        let v = match k {
            2 => 0.0,
            3 => -b * ydot_max,
            _ => b * b * lo[k - 3],
        };
        lo.push(v);
    }
    lo
}

/// Fibonacci number `F_{r+2}` with `F_0 = 0`, `F_1 = 1`: the vertex count of
/// the head part of a buffer with tight lower bounds.
pub fn fibonacci_vertex_count(r: usize) -> u64 {
    let (mut a, mut b) = (0u64, 1u64);
    for _ in 0..r + 2 {
        let next = a + b;
        a = b;
        b = next;
    }
    a
}

/// Vertex list as CSV, header `s1,...,sn`.
pub fn vertices_csv(vertices: &[Vertex], n: usize) -> String {
    let mut out = (1..=n)
        .map(|i| format!("s{i}"))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for v in vertices {
        out.push_str(
            &v.s.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
    }
    out
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= VERTEX_DEDUP_TOL * x.abs().max(y.abs()).max(1.0))
}
