//! Policies that are exactly affine on the buffer.
//!
//! A ReLU network is affine on a convex region whenever every hidden unit has
//! a constant activation pattern there. Because pre-activations are affine in
//! the input on such a region, it suffices that all region *vertices* agree on
//! each unit's sign. [`enforce_affine_region`] pushes the vertices through the
//! network layer by layer and shifts the bias of each disagreeing unit until
//! they do.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::buffer::Vertex;
use crate::error::{check_len, Error, Result};
use crate::hull::lstsq;
use crate::nn::{Activation, Layer, Mlp, OutputActivation};

/// Maximum vertex residual accepted by [`extract_affine_map`].
pub const AFFINE_TOL: f64 = 1e-9;

/// Distance from zero at which shifted units leave their extreme vertex, so
/// that the activation pattern at every vertex is unambiguous.
const SHIFT_MARGIN: f64 = 1e-9;

/// Anything that maps transformed states `s` to controls.
pub trait Policy {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn act(&self, s: &[f64]) -> Result<Vec<f64>>;
}

/// Fixed per-coordinate input scaling `z = (s - offset) * scale` applied
/// before the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    pub fn identity(n: usize) -> Self {
        Self {
            offset: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Maps the bounding box of `points` onto `[-1, 1]` per coordinate.
    /// Coordinates with no spread keep unit scale.
    pub fn from_points(points: &[Vec<f64>]) -> Self {
        let n = points.first().map_or(0, Vec::len);
        let mut offset = vec![0.0; n];
        let mut scale = vec![1.0; n];
        for i in 0..n {
            let lo = points.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
            let hi = points
                .iter()
                .map(|p| p[i])
                .fold(f64::NEG_INFINITY, f64::max);
            offset[i] = 0.5 * (lo + hi);
            if hi - lo > 1e-12 {
                scale[i] = 2.0 / (hi - lo);
            }
        }
        Self { offset, scale }
    }

    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(x, (o, k))| (x - o) * k)
            .collect()
    }
}

/// Statistics of one enforcement pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnforceStats {
    pub units_shifted: usize,
    pub total_shift: f64,
}

/// A network constrained to be affine on the convex hull of `region_vertices`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicedPolicy {
    pub net: Mlp,
    pub scaling: InputScaling,
    pub region_vertices: Vec<Vertex>,
    pub enforced: bool,
}

/// `u = d s + e` with `d` stored as `m` rows of length `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub d: Vec<Vec<f64>>,
    pub e: Vec<f64>,
}

impl AffineMap {
    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        self.d
            .iter()
            .zip(&self.e)
            .map(|(row, e)| row.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() + e)
            .collect()
    }
}

impl PolicedPolicy {
    /// Wraps `net` without enforcing anything yet.
    pub fn new(net: Mlp, scaling: InputScaling, region_vertices: Vec<Vertex>) -> Result<Self> {
        if region_vertices.is_empty() {
            return Err(Error::Shape(
                "affine region needs at least one vertex".into(),
            ));
        }
        let n = net.input_dim();
        check_len("input scaling", scaling.offset.len(), n)?;
        check_len("input scaling", scaling.scale.len(), n)?;
        for v in &region_vertices {
            check_len("region vertex", v.s.len(), n)?;
        }
        Ok(Self {
            net,
            scaling,
            region_vertices,
            enforced: false,
        })
    }

    /// A single-layer policy computing `map` exactly, followed by `output`.
    pub fn from_affine(
        map: &AffineMap,
        region_vertices: Vec<Vertex>,
        output: OutputActivation,
    ) -> Result<Self> {
        let m = map.d.len();
        check_len("affine offset", map.e.len(), m)?;
        let n = map.d.first().map_or(0, Vec::len);
        let mut weights = Vec::with_capacity(n * m);
        for row in &map.d {
            check_len("affine row", row.len(), n)?;
            weights.extend(row);
        }
        let layer = Layer {
            inputs: n,
            outputs: m,
            weights,
            bias: map.e.clone(),
        };
        let net = Mlp::new(vec![layer], Activation::Relu, output)?;
        let mut policy = Self::new(net, InputScaling::identity(n), region_vertices)?;
        policy.enforced = true;
        Ok(policy)
    }

    /// Re-applies the bias adjustment, e.g. after an optimizer step.
    pub fn enforce(&mut self) -> Result<EnforceStats> {
        let points: Vec<Vec<f64>> = self
            .region_vertices
            .iter()
            .map(|v| self.scaling.apply(&v.s))
            .collect();
        let stats = enforce_on_points(&mut self.net, &points)?;
        self.enforced = true;
        Ok(stats)
    }

    /// Output before the output clamp.
    pub fn act_raw(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("policy input", s.len(), self.state_dim())?;
        self.net.forward_raw(&self.scaling.apply(s))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PolicyFile {
            format: FORMAT.into(),
            version: 1,
            policy: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(text)
            .map_err(|e| Error::IncompatibleCheckpoint(format!("not a policy file: {e}")))?;
        if file.format != FORMAT || file.version != 1 {
            return Err(Error::IncompatibleCheckpoint(format!(
                "unsupported policy format {} v{}",
                file.format, file.version
            )));
        }
        let p = file.policy;
        // Re-validate shapes that serde cannot check.
        let net = Mlp::new(
            p.net.layers().to_vec(),
            p.net.hidden_activation(),
            p.net.output_activation().clone(),
        )
        .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
        let mut out = Self::new(net, p.scaling, p.region_vertices)
            .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
        out.enforced = p.enforced;
        Ok(out)
    }
}

const FORMAT: &str = "policed-policy";

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    version: u32,
    policy: PolicedPolicy,
}

impl Policy for PolicedPolicy {
    fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("policy input", s.len(), self.state_dim())?;
        self.net.forward(&self.scaling.apply(s))
    }
}

/// Enforces affinity of `net` on the hull of `vertices` (no input scaling).
pub fn enforce_affine_region(net: Mlp, vertices: Vec<Vertex>) -> Result<PolicedPolicy> {
    let n = net.input_dim();
    let mut policy = PolicedPolicy::new(net, InputScaling::identity(n), vertices)?;
    policy.enforce()?;
    Ok(policy)
}

/// Shifts hidden biases so that all `points` share each unit's activation
/// pattern. Majority sign wins; ties go to the active side.
pub fn enforce_on_points(net: &mut Mlp, points: &[Vec<f64>]) -> Result<EnforceStats> {
    let hidden = net.layers().len() - 1;
    if hidden > 0 && net.hidden_activation() != Activation::Relu {
        return Err(Error::UnsupportedArchitecture(format!(
            "enforcement needs ReLU hidden layers, got {:?}",
            net.hidden_activation()
        )));
    }
    let mut stats = EnforceStats::default();
    let mut images: Vec<Vec<f64>> = points.to_vec();
    for layer in net.layers_mut().iter_mut().take(hidden) {
        let mut pre: Vec<Vec<f64>> = images.iter().map(|x| layer.affine(x)).collect();
        for j in 0..layer.outputs {
            let active = pre.iter().filter(|z| z[j] >= 0.0).count();
            let inactive = pre.len() - active;
            let lo = pre.iter().map(|z| z[j]).fold(f64::INFINITY, f64::min);
            let hi = pre.iter().map(|z| z[j]).fold(f64::NEG_INFINITY, f64::max);
            let shift = if active >= inactive {
                if lo < 0.0 {
                    SHIFT_MARGIN - lo
                } else {
                    0.0
                }
            } else if hi > 0.0 {
                -SHIFT_MARGIN - hi
            } else {
                0.0
            };
            if shift != 0.0 {
                layer.bias[j] += shift;
                pre.iter_mut().for_each(|z| z[j] += shift);
                stats.units_shifted += 1;
                stats.total_shift += shift.abs();
            }
        }
        images = pre
            .into_iter()
            .map(|z| z.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
    }
    Ok(stats)
}

/// Least-squares affine fit of the raw (pre-clamp) policy output over the
/// region vertices and their centroid, without checking the residual.
pub fn fit_affine_map(policy: &PolicedPolicy) -> Result<AffineMap> {
    let n = policy.state_dim();
    let m = policy.action_dim();
    let verts = &policy.region_vertices;
    let count = verts.len() as f64;
    let centroid: Vec<f64> = (0..n)
        .map(|i| verts.iter().map(|v| v.s[i]).sum::<f64>() / count)
        .collect();
    let u0 = policy.act_raw(&centroid)?;

    let a = DMatrix::from_fn(verts.len(), n, |r, c| verts[r].s[c] - centroid[c]);
    let mut d = vec![vec![0.0; n]; m];
    let outputs: Vec<Vec<f64>> = verts
        .iter()
        .map(|v| policy.act_raw(&v.s))
        .collect::<Result<_>>()?;
    for (k, row) in d.iter_mut().enumerate() {
        let b = DVector::from_fn(verts.len(), |r, _| outputs[r][k] - u0[k]);
        let (x, _) = lstsq(&a, &b, 1e-12);
        row.copy_from_slice(x.as_slice());
    }
    let e = (0..m)
        .map(|k| u0[k] - d[k].iter().zip(&centroid).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    Ok(AffineMap { d, e })
}

/// Affine map of an enforced policy, checked against every region vertex.
pub fn extract_affine_map(policy: &PolicedPolicy) -> Result<AffineMap> {
    let map = fit_affine_map(policy)?;
    let samples: Vec<Vec<f64>> = policy.region_vertices.iter().map(|v| v.s.clone()).collect();
    let residual = residual_against(policy, &map, &samples)?;
    if !(residual <= AFFINE_TOL) {
        return Err(Error::NotAffine {
            residual,
            tolerance: AFFINE_TOL,
        });
    }
    Ok(map)
}

/// Largest `|policy(s) - (D s + e)|_inf` over `samples`, with the affine map
/// fitted on the region vertices.
pub fn affine_residual(policy: &PolicedPolicy, samples: &[Vec<f64>]) -> Result<f64> {
    let map = fit_affine_map(policy)?;
    residual_against(policy, &map, samples)
}

fn residual_against(policy: &PolicedPolicy, map: &AffineMap, samples: &[Vec<f64>]) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in samples {
        let got = policy.act_raw(s)?;
        let want = map.apply(s);
        for (g, w) in got.iter().zip(&want) {
            let r = (g - w).abs();
            if r.is_nan() {
                return Ok(f64::NAN);
            }
            worst = worst.max(r);
        }
    }
    Ok(worst)
}

/// Whether the raw output at every region vertex lies inside the clamp box
/// (so the clamp is inactive on the whole region). Networks without a clamp
/// always pass.
pub fn outputs_within_clamp(policy: &PolicedPolicy, tol: f64) -> Result<bool> {
    let OutputActivation::Clamp { low, high } = policy.net.output_activation() else {
        return Ok(true);
    };
    for v in &policy.region_vertices {
        let u = policy.act_raw(&v.s)?;
        if u.iter()
            .zip(low.iter().zip(high))
            .any(|(x, (l, h))| *x < l - tol || *x > h + tol)
        {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn verts(points: &[&[f64]]) -> Vec<Vertex> {
        points.iter().map(|p| Vertex { s: p.to_vec() }).collect()
    }

    fn hull_samples(vertices: &[Vertex], count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let w: Vec<f64> = vertices.iter().map(|_| -rng.random::<f64>().ln()).collect();
                let total: f64 = w.iter().sum();
                let n = vertices[0].s.len();
                (0..n)
                    .map(|i| {
                        vertices
                            .iter()
                            .zip(&w)
                            .map(|(v, wk)| v.s[i] * wk / total)
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    fn unit_relu(w: f64, b: f64) -> Mlp {
        let hidden = Layer {
            inputs: 1,
            outputs: 1,
            weights: vec![w],
            bias: vec![b],
        };
        let out = Layer {
            inputs: 1,
            outputs: 1,
            weights: vec![1.0],
            bias: vec![0.0],
        };
        Mlp::new(
            vec![hidden, out],
            Activation::Relu,
            OutputActivation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn already_affine_net_is_untouched() {
        let net = unit_relu(1.0, 2.0);
        let policy = enforce_affine_region(net.clone(), verts(&[&[0.0], &[1.0]])).unwrap();
        assert_eq!(policy.net, net);
    }

    #[test]
    fn single_unit_hand_trace() {
        // q(s) = relu(s - 0.5) on [0, 1]: vertex pre-activations -0.5, 0.5 tie,
        // tie goes active so the bias moves up by 0.5 (plus margin).
        let policy = enforce_affine_region(unit_relu(1.0, -0.5), verts(&[&[0.0], &[1.0]])).unwrap();
        let b = policy.net.layers()[0].bias[0];
        assert!((b - (0.0 + SHIFT_MARGIN)).abs() < 1e-15);
        let map = extract_affine_map(&policy).unwrap();
        assert!((map.d[0][0] - 1.0).abs() < 1e-12);
        assert!(map.e[0].abs() < 1e-8);
        for s in [0.0, 0.25, 0.5, 1.0] {
            assert!((policy.act(&[s]).unwrap()[0] - s).abs() < 1e-8);
        }
    }

    #[test]
    fn majority_inactive_turns_unit_off() {
        let region = verts(&[&[0.0], &[0.1], &[0.2], &[1.0]]);
        let policy = enforce_affine_region(unit_relu(1.0, -0.5), region).unwrap();
        for s in [0.0, 0.5, 1.0] {
            assert_eq!(policy.act(&[s]).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn random_net_becomes_affine_on_pendulum_buffer() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::random(
            &[4, 32, 32, 1],
            Activation::Relu,
            OutputActivation::Identity,
            &mut rng,
        )
        .unwrap();
        let mut region = Vec::new();
        for head in [[0.1, 0.0], [0.2, 0.0], [0.1, 1.0]] {
            for p in [-0.9, 0.9] {
                for v in [-1.0, 1.0] {
                    region.push(Vertex {
                        s: vec![head[0], head[1], p, v],
                    });
                }
            }
        }
        let samples = hull_samples(&region, 2000, 3);
        let loose = PolicedPolicy::new(
            net.clone(),
            InputScaling::from_points(&[vec![0.1; 4]]),
            region.clone(),
        )
        .unwrap();
        let before = affine_residual(&loose, &samples).unwrap();

        let policy = enforce_affine_region(net, region).unwrap();
        let after = affine_residual(&policy, &samples).unwrap();
        assert!(after <= 1e-9, "residual {after}");
        assert!(before > after);
        extract_affine_map(&policy).unwrap();
    }

    #[test]
    fn linear_and_constant_networks() {
        let layer = Layer {
            inputs: 2,
            outputs: 1,
            weights: vec![2.0, -3.0],
            bias: vec![0.0],
        };
        let net = Mlp::new(vec![layer], Activation::Relu, OutputActivation::Identity).unwrap();
        let policy =
            enforce_affine_region(net, verts(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let map = extract_affine_map(&policy).unwrap();
        assert!((map.d[0][0] - 2.0).abs() < 1e-12 && (map.d[0][1] + 3.0).abs() < 1e-12);
        assert!(map.e[0].abs() < 1e-12);

        let constant = Layer {
            inputs: 2,
            outputs: 1,
            weights: vec![0.0, 0.0],
            bias: vec![4.0],
        };
        let net = Mlp::new(vec![constant], Activation::Relu, OutputActivation::Identity).unwrap();
        let policy =
            enforce_affine_region(net, verts(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let map = extract_affine_map(&policy).unwrap();
        assert!(map.d[0].iter().all(|v| v.abs() < 1e-12));
        assert!((map.e[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_vertex_region_has_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::random(
            &[2, 8, 1],
            Activation::Relu,
            OutputActivation::Identity,
            &mut rng,
        )
        .unwrap();
        let policy =
            PolicedPolicy::new(net, InputScaling::identity(2), verts(&[&[0.3, 0.4]])).unwrap();
        assert_eq!(affine_residual(&policy, &[vec![0.3, 0.4]]).unwrap(), 0.0);
    }

    #[test]
    fn non_relu_hidden_layers_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::random(
            &[2, 4, 1],
            Activation::Identity,
            OutputActivation::Identity,
            &mut rng,
        )
        .unwrap();
        assert!(matches!(
            enforce_affine_region(net, verts(&[&[0.0, 0.0]])),
            Err(Error::UnsupportedArchitecture(_))
        ));
    }

    #[test]
    fn unenforced_random_net_fails_extraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::random(
            &[1, 16, 1],
            Activation::Relu,
            OutputActivation::Identity,
            &mut rng,
        )
        .unwrap();
        let mut net = net;
        // spread the kinks over the region
        for (j, b) in net.layers_mut()[0].bias.iter_mut().enumerate() {
            *b = (j as f64 - 8.0) / 8.0;
        }
        let region = verts(&[&[-1.0], &[-0.5], &[0.0], &[0.5], &[1.0]]);
        let policy = PolicedPolicy::new(net, InputScaling::identity(1), region).unwrap();
        assert!(matches!(
            extract_affine_map(&policy),
            Err(Error::NotAffine { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::random(
            &[2, 4, 1],
            Activation::Relu,
            OutputActivation::Identity,
            &mut rng,
        )
        .unwrap();
        let policy = enforce_affine_region(net, verts(&[&[0.0, 0.0], &[1.0, 1.0]])).unwrap();
        let back = PolicedPolicy::from_json(&policy.to_json().unwrap()).unwrap();
        assert_eq!(back, policy);
        assert!(matches!(
            PolicedPolicy::from_json("{\"format\":\"other\"}"),
            Err(Error::IncompatibleCheckpoint(_))
        ));
    }
}
